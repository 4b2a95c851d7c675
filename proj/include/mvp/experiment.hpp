#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mvp/baselines.hpp"
#include "mvp/csv.hpp"
#include "mvp/grid.hpp"
#include "mvp/groups.hpp"
#include "mvp/metrics.hpp"
#include "mvp/online_least_squares.hpp"
#include "mvp/predictor.hpp"
#include "mvp/rates.hpp"
#include "mvp/rng.hpp"
#include "mvp/scores.hpp"
#include "mvp/synthetic.hpp"
#include "mvp/transcript.hpp"

namespace mvp {

enum class experiment_kind {
    iid_marginal,
    group_noise,
    covariate_shift,
    sorted_adversarial,
    mod_groups,
    csv_scores,
};

enum class method_kind { mvp, split, weighted_split, group_conservative, aci };

inline std::string to_string(experiment_kind k) {
    switch (k) {
        case experiment_kind::iid_marginal: return "iid_marginal";
        case experiment_kind::group_noise: return "group_noise";
        case experiment_kind::covariate_shift: return "covariate_shift";
        case experiment_kind::sorted_adversarial: return "sorted_adversarial";
        case experiment_kind::mod_groups: return "mod_groups";
        case experiment_kind::csv_scores: return "csv_scores";
    }
    return "?";
}

inline experiment_kind parse_experiment_kind(const std::string& s) {
    for (auto k : {experiment_kind::iid_marginal, experiment_kind::group_noise,
                   experiment_kind::covariate_shift, experiment_kind::sorted_adversarial,
                   experiment_kind::mod_groups, experiment_kind::csv_scores})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown experiment kind '" + s + "'");
}

inline std::string to_string(method_kind m) {
    switch (m) {
        case method_kind::mvp: return "mvp";
        case method_kind::split: return "split";
        case method_kind::weighted_split: return "weighted_split";
        case method_kind::group_conservative: return "group_conservative";
        case method_kind::aci: return "aci";
    }
    return "?";
}

inline method_kind parse_method_kind(const std::string& s) {
    for (auto m : {method_kind::mvp, method_kind::split, method_kind::weighted_split,
                   method_kind::group_conservative, method_kind::aci})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown method '" + s + "'");
}

inline std::string to_string(mvp_variant v) {
    return v == mvp_variant::normalized ? "normalized" : "unnormalized";
}

inline mvp_variant parse_variant(const std::string& s) {
    if (s == "normalized") return mvp_variant::normalized;
    if (s == "unnormalized") return mvp_variant::unnormalized;
    throw std::invalid_argument("unknown variant '" + s + "'");
}

struct generator_params {
    double sigma_x2 = 0.1;
    double sigma_y2 = 0.2;
    double group_base_var = 0.2;
    double group_g1_var = 3.0;
    double group_rest_var = 0.1;
    std::vector<double> beta{-1, 0, 0, 0, 1};
    double max_score = 0.5;        // sorted ramp endpoint
    std::int64_t shift_pool = 2000;  // base points per covariate-shift trial
    double ridge = 1e-6;
    int mod_group_count = 20;
};

struct experiment_config {
    experiment_kind kind = experiment_kind::iid_marginal;
    std::int64_t T = -1;  // measured rounds; negative = kind default
    int trials = -1;      // negative = kind default
    double delta = 0.1;
    int m = 40;
    int r = 100;
    double epsilon = 1.0;
    std::optional<double> eta;            // theory value when unset
    std::optional<mvp_variant> variant;   // kind default when unset
    std::vector<method_kind> methods;     // kind default when empty
    aci::params aci_params;
    generator_params gen;
    std::uint64_t seed = 1;
    std::string out_dir;                  // empty: no files written
    std::optional<bool> rescale;          // kind default when unset
    bool smooth_noise = false;
    double smooth_width = 0.0;            // 0 = 1/(rm)
    std::int64_t warm = -1;               // warm-start rounds; -1 = kind default
    int threads = 0;                      // 0 = hardware concurrency
    bool emit_transcripts = true;
    std::string input_path;               // csv_scores
};

inline experiment_config resolve_defaults(experiment_config c) {
    const auto def = [&](std::int64_t T, int trials, std::vector<method_kind> methods,
                         bool rescale, std::int64_t warm) {
        if (c.T < 0) c.T = T;
        if (c.trials < 0) c.trials = trials;
        if (c.methods.empty()) c.methods = std::move(methods);
        if (!c.rescale) c.rescale = rescale;
        if (c.warm < 0) c.warm = warm;
    };
    switch (c.kind) {
        case experiment_kind::iid_marginal:
            def(2000, 50, {method_kind::mvp, method_kind::split}, false, 0);
            break;
        case experiment_kind::group_noise:
            def(20000, 10,
                {method_kind::mvp, method_kind::split, method_kind::group_conservative},
                true, 2000);
            break;
        case experiment_kind::covariate_shift:
            def(c.gen.shift_pool / 2, 50, {method_kind::mvp, method_kind::weighted_split},
                false, 0);
            break;
        case experiment_kind::sorted_adversarial:
            def(5283, 1, {method_kind::mvp, method_kind::aci}, false, 0);
            break;
        case experiment_kind::mod_groups:
            def(5283, 5, {method_kind::mvp, method_kind::aci}, true, 0);
            break;
        case experiment_kind::csv_scores:
            def(0, 1, {method_kind::mvp}, false, 0);
            break;
    }
    if (!c.variant) c.variant = mvp_variant::unnormalized;
    if (c.smooth_width == 0.0)
        c.smooth_width = 1.0 / (static_cast<double>(c.r) * c.m);
    if (c.threads == 0)
        c.threads = std::max(1u, std::thread::hardware_concurrency());
    return c;
}

inline void validate(const experiment_config& c) {
    if (c.trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (c.kind != experiment_kind::csv_scores && c.T < 1)
        throw std::invalid_argument("config: T must be >= 1");
    if (c.kind == experiment_kind::sorted_adversarial && c.T < 2)
        throw std::invalid_argument("config: sorted_adversarial needs T >= 2");
    if (c.methods.empty()) throw std::invalid_argument("config: no methods selected");
    coverage_target check_delta(c.delta);
    bucket_grid check_grid(c.m, c.r);
    if (c.warm < 0) throw std::invalid_argument("config: warm must be >= 0");
    if (c.kind == experiment_kind::csv_scores && c.input_path.empty())
        throw std::invalid_argument("config: csv_scores needs an input path");
    static const std::map<experiment_kind, std::vector<method_kind>> allowed = {
        {experiment_kind::iid_marginal,
         {method_kind::mvp, method_kind::split, method_kind::aci}},
        {experiment_kind::group_noise,
         {method_kind::mvp, method_kind::split, method_kind::group_conservative,
          method_kind::aci}},
        {experiment_kind::covariate_shift,
         {method_kind::mvp, method_kind::weighted_split, method_kind::split}},
        {experiment_kind::sorted_adversarial, {method_kind::mvp, method_kind::aci}},
        {experiment_kind::mod_groups, {method_kind::mvp, method_kind::aci}},
        {experiment_kind::csv_scores, {method_kind::mvp, method_kind::aci}},
    };
    const auto& ok = allowed.at(c.kind);
    for (auto m : c.methods)
        if (std::find(ok.begin(), ok.end(), m) == ok.end())
            throw std::invalid_argument("config: method " + to_string(m) +
                                        " not available for experiment " +
                                        to_string(c.kind));
    for (double b : c.gen.beta)
        if (!std::isfinite(b)) throw std::invalid_argument("config: non-finite beta");
}

inline std::string config_comment(const experiment_config& c) {
    std::ostringstream s;
    s << "# config: experiment=" << to_string(c.kind) << " T=" << c.T
      << " trials=" << c.trials << " delta=" << csv::format_double(c.delta)
      << " m=" << c.m << " r=" << c.r << " epsilon=" << csv::format_double(c.epsilon)
      << " eta=" << (c.eta ? csv::format_double(*c.eta) : std::string("theory"))
      << " variant=" << to_string(*c.variant) << " methods=";
    for (std::size_t i = 0; i < c.methods.size(); ++i)
        s << (i ? "+" : "") << to_string(c.methods[i]);
    s << " warm=" << c.warm << " seed=" << c.seed
      << " rescale=" << (*c.rescale ? 1 : 0) << " smooth=" << (c.smooth_noise ? 1 : 0)
      << " gamma=" << csv::format_double(c.aci_params.gamma)
      << " lookback=" << c.aci_params.lookback << " offset=" << c.aci_params.offset;
    return s.str();
}

struct method_trial {
    transcript tr;
    coverage_report report;
    stability_summary stability;
    std::int64_t clamped_scores = 0;
};

struct method_series {
    method_kind method;
    std::vector<method_trial> trials;
    trial_aggregate aggregate;
};

struct experiment_result {
    experiment_config config;
    std::vector<std::string> group_names;
    std::vector<method_series> methods;

    const method_series& series(method_kind m) const {
        for (const auto& s : methods)
            if (s.method == m) return s;
        throw std::out_of_range("experiment_result: method not run");
    }
};

// CSV dataset ingestion --------------------------------------------------------

enum class csv_schema { scores, regression };

struct ingested_stream {
    std::vector<double> scores;          // scores schema
    Eigen::MatrixXd features;            // optional x_* columns (row per round)
    std::vector<std::string> feature_names;
    Eigen::VectorXd labels;              // regression schema
    bool has_features = false;
};

inline ingested_stream ingest_csv(const std::string& path, csv_schema schema) {
    const auto t = csv::read_table(path);
    ingested_stream out;
    std::vector<std::size_t> xcols;
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i].rfind("x_", 0) == 0) {
            xcols.push_back(i);
            out.feature_names.push_back(t.header[i]);
        }
    const std::int64_t n = static_cast<std::int64_t>(t.rows.size());
    if (!xcols.empty()) {
        out.has_features = true;
        out.features.resize(n, static_cast<int>(xcols.size()));
    }
    if (schema == csv_schema::scores) {
        const auto cs = t.column("score");
        (void)t.column("t");
        out.scores.reserve(t.rows.size());
        std::size_t line = 1;
        for (std::int64_t i = 0; i < n; ++i) {
            ++line;
            out.scores.push_back(csv::parse_double(t.rows[i][cs], line));
            for (std::size_t j = 0; j < xcols.size(); ++j)
                out.features(i, static_cast<int>(j)) =
                    csv::parse_double(t.rows[i][xcols[j]], line);
        }
    } else {
        if (!t.has_column("y"))
            throw std::runtime_error(path + ": regression schema requires a 'y' column");
        if (xcols.empty())
            throw std::runtime_error(path + ": regression schema requires x_* columns");
        const auto cy = t.column("y");
        out.labels.resize(n);
        std::size_t line = 1;
        for (std::int64_t i = 0; i < n; ++i) {
            ++line;
            out.labels(i) = csv::parse_double(t.rows[i][cy], line);
            for (std::size_t j = 0; j < xcols.size(); ++j)
                out.features(i, static_cast<int>(j)) =
                    csv::parse_double(t.rows[i][xcols[j]], line);
        }
    }
    return out;
}

namespace detail {

// score-range handling: clamp into [0,1] (counting clamps) or the monotone
// rescale s/(1+s); optional smoothing noise on top
class score_pipe {
public:
    score_pipe(bool rescale, bool smooth, double smooth_width, std::uint64_t seed)
        : rescale_(rescale), smooth_(smooth), width_(smooth_width), gen_(seed) {}

    double operator()(double raw) {
        double s;
        if (rescale_) {
            s = rescale_unbounded(raw);
        } else if (raw > 1.0) {
            ++clamps_;
            s = 1.0;
        } else {
            s = raw;
        }
        if (smooth_) s = smooth_score(s, width_, gen_);
        return s;
    }

    std::int64_t clamps() const { return clamps_; }

private:
    bool rescale_;
    bool smooth_;
    double width_;
    rng gen_;
    std::int64_t clamps_ = 0;
};

struct trial_output {
    std::map<method_kind, method_trial> by_method;
};

inline width_function width_for(const experiment_config& cfg) {
    if (*cfg.rescale) return [](double q) { return width_functions::abs_residual_rescaled(q); };
    return [](double q) { return width_functions::abs_residual(q); };
}

inline bool wants(const experiment_config& cfg, method_kind m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

inline predictor make_predictor(const experiment_config& cfg, std::size_t n_groups,
                                std::uint64_t seed) {
    predictor_config pc;
    pc.grid = bucket_grid(cfg.m, cfg.r);
    pc.target = coverage_target(cfg.delta);
    pc.epsilon = cfg.epsilon;
    pc.eta = cfg.eta;
    pc.variant = *cfg.variant;
    pc.seed = seed;
    return predictor(pc, n_groups);
}

// MVP over a realized (mask, score) sequence; rounds <= warm update state only
inline method_trial run_mvp_stream(const experiment_config& cfg,
                                   const std::vector<std::uint64_t>& masks,
                                   const std::vector<double>& scores,
                                   std::int64_t warm, std::uint64_t seed,
                                   std::int64_t clamps,
                                   const std::vector<std::string>& group_names) {
    auto pred = make_predictor(cfg, group_names.size(), seed);
    method_trial out;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        const auto choice = pred.predict(masks[t]);
        auto rec = pred.update(masks[t], choice.q, scores[t]);
        if (static_cast<std::int64_t>(t) >= warm) out.tr.append(rec);
    }
    out.clamped_scores = clamps;
    out.report = build_report(out.tr, group_names, bucket_grid(cfg.m, cfg.r),
                              coverage_target(cfg.delta), cfg.epsilon, width_for(cfg));
    out.stability = threshold_stability(out.tr, bucket_grid(cfg.m, cfg.r));
    return out;
}

// ACI over the same sequence; burn-in = warm + offset rounds kept out of metrics
inline method_trial run_aci_stream(const experiment_config& cfg,
                                   const std::vector<std::uint64_t>& masks,
                                   const std::vector<double>& scores,
                                   std::int64_t warm, std::int64_t clamps,
                                   const std::vector<std::string>& group_names) {
    aci state(coverage_target(cfg.delta), cfg.aci_params);
    const bucket_grid grid(cfg.m, cfg.r);
    const std::int64_t burn = warm + cfg.aci_params.offset;
    method_trial out;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        const double q = state.predict();
        const bool covered = state.observe(q, scores[t]);
        if (static_cast<std::int64_t>(t) >= burn) {
            round_record rec;
            rec.group_mask = masks[t];
            rec.q = q;
            rec.bucket = grid.bucket_index(q);
            rec.score = scores[t];
            rec.covered = covered;
            out.tr.append(rec);
        }
    }
    out.clamped_scores = clamps;
    out.report = build_report(out.tr, group_names, grid, coverage_target(cfg.delta),
                              cfg.epsilon, width_for(cfg));
    out.stability = threshold_stability(out.tr, grid);
    return out;
}

// Regression experiments (iid_marginal, group_noise): MVP and ACI consume
// scores from a model trained online on all past data; split and the
// group-conservative method share a model trained on even rounds (1-based)
// with odd rounds forming the growing calibration set, rescoring the
// calibration set under the current model.
inline trial_output run_regression_trial(const experiment_config& cfg,
                                         const regression_stream& stream,
                                         const group_system& groups,
                                         std::uint64_t trial_seed) {
    const std::int64_t total = stream.rounds();
    const std::int64_t warm = cfg.warm;
    const int d = stream.dimension();
    const coverage_target target(cfg.delta);
    const bucket_grid grid(cfg.m, cfg.r);
    const auto group_names = groups.names();

    std::vector<std::uint64_t> masks(static_cast<std::size_t>(total));
    for (std::int64_t t = 0; t < total; ++t) {
        const auto row = stream.features.row(t);
        masks[static_cast<std::size_t>(t)] =
            groups.active_mask(std::span<const double>(row.data(), row.size()));
    }

    trial_output out;

    // all-past-data pipeline shared by mvp and aci
    if (wants(cfg, method_kind::mvp) || wants(cfg, method_kind::aci)) {
        score_pipe pipe(*cfg.rescale, cfg.smooth_noise, cfg.smooth_width,
                        derive_seed(trial_seed, 11));
        std::vector<double> scores(static_cast<std::size_t>(total));
        online_least_squares model(d, cfg.gen.ridge);
        for (std::int64_t t = 0; t < total; ++t) {
            const Eigen::VectorXd x = stream.features.row(t).transpose();
            scores[static_cast<std::size_t>(t)] =
                pipe(abs_residual_score(model.predict(x), stream.labels(t)));
            model.update(x, stream.labels(t));
        }
        if (wants(cfg, method_kind::mvp))
            out.by_method[method_kind::mvp] = run_mvp_stream(
                cfg, masks, scores, warm, derive_seed(trial_seed, 21), pipe.clamps(),
                group_names);
        if (wants(cfg, method_kind::aci))
            out.by_method[method_kind::aci] =
                run_aci_stream(cfg, masks, scores, warm, pipe.clamps(), group_names);
    }

    if (!wants(cfg, method_kind::split) && !wants(cfg, method_kind::group_conservative))
        return out;

    // split pipeline: model on even rounds, calibration on odd rounds (1-based);
    // calibration scores are recomputed under the current model whenever it
    // changes, so the order statistics always reflect the deployed predictor
    const bool want_cons = wants(cfg, method_kind::group_conservative);
    score_pipe pipe(*cfg.rescale, cfg.smooth_noise, cfg.smooth_width,
                    derive_seed(trial_seed, 12));
    online_least_squares model(d, cfg.gen.ridge);
    const std::int64_t cal_cap = total / 2 + 1;
    Eigen::MatrixXd cal_x(cal_cap, d);
    Eigen::VectorXd cal_y(cal_cap);
    std::int64_t n_cal = 0;
    std::vector<double> cal_scores;
    cal_scores.reserve(static_cast<std::size_t>(cal_cap));
    std::vector<std::vector<std::int64_t>> group_rows(groups.size());
    std::vector<double> scratch;
    bool model_dirty = false;

    const auto transform = [&](double raw) {
        return *cfg.rescale ? rescale_unbounded(raw) : std::min(raw, 1.0);
    };
    // k-th smallest with the split rank rule; +inf when the rank passes n
    const auto rank_stat = [&](std::vector<double>& v) {
        const auto n = static_cast<std::int64_t>(v.size());
        const auto rank = static_cast<std::int64_t>(
            std::ceil((1.0 - target.delta) * static_cast<double>(n + 1)));
        if (n == 0 || rank > n) return std::numeric_limits<double>::infinity();
        if (rank < 1) return -std::numeric_limits<double>::infinity();
        std::nth_element(v.begin(), v.begin() + (rank - 1), v.end());
        return v[static_cast<std::size_t>(rank - 1)];
    };

    method_trial split_trial, cons_trial;
    const auto record = [&](method_trial& mt, double q, double s,
                            std::uint64_t mask) {
        round_record rec;
        rec.group_mask = mask;
        rec.q = std::min(q, 1.0);  // +inf sentinel plays the trivial set
        rec.bucket = grid.bucket_index(rec.q);
        rec.score = s;
        rec.covered = cover(rec.q, s);
        mt.tr.append(rec);
    };

    for (std::int64_t t = 0; t < total; ++t) {
        if (model_dirty && n_cal > 0) {
            const Eigen::VectorXd preds = cal_x.topRows(n_cal) * model.coefficients();
            for (std::int64_t i = 0; i < n_cal; ++i)
                cal_scores[static_cast<std::size_t>(i)] =
                    transform(std::fabs(preds(i) - cal_y(i)));
            model_dirty = false;
        }

        scratch = cal_scores;
        const double q_split = rank_stat(scratch);
        const std::uint64_t mask = masks[static_cast<std::size_t>(t)];
        double q_cons = q_split;
        if (want_cons) {
            double best = -std::numeric_limits<double>::infinity();
            bool any = false;
            for (std::uint64_t m = mask; m != 0; m &= m - 1) {
                const auto g = static_cast<std::size_t>(std::countr_zero(m));
                scratch.clear();
                for (auto row : group_rows[g])
                    scratch.push_back(cal_scores[static_cast<std::size_t>(row)]);
                best = std::max(best, rank_stat(scratch));
                any = true;
            }
            if (any) q_cons = best;
        }

        const Eigen::VectorXd x = stream.features.row(t).transpose();
        const double s = pipe(abs_residual_score(model.predict(x), stream.labels(t)));
        if (t >= warm) {
            if (wants(cfg, method_kind::split)) record(split_trial, q_split, s, mask);
            if (want_cons) record(cons_trial, q_cons, s, mask);
        }

        if ((t + 1) % 2 == 1) {  // odd rounds (1-based) calibrate
            cal_x.row(n_cal) = stream.features.row(t);
            cal_y(n_cal) = stream.labels(t);
            cal_scores.push_back(transform(
                std::fabs(model.predict(x) - stream.labels(t))));
            for (std::uint64_t m = mask; m != 0; m &= m - 1)
                group_rows[static_cast<std::size_t>(std::countr_zero(m))].push_back(n_cal);
            ++n_cal;
        } else {  // even rounds train
            model.update(x, stream.labels(t));
            model_dirty = true;
        }
    }

    const auto finalize = [&](method_trial& mt) {
        mt.clamped_scores = pipe.clamps();
        mt.report = build_report(mt.tr, group_names, grid, target, cfg.epsilon,
                                 width_for(cfg));
        mt.stability = threshold_stability(mt.tr, grid);
    };
    if (wants(cfg, method_kind::split)) {
        finalize(split_trial);
        out.by_method[method_kind::split] = std::move(split_trial);
    }
    if (want_cons) {
        finalize(cons_trial);
        out.by_method[method_kind::group_conservative] = std::move(cons_trial);
    }
    return out;
}

inline trial_output run_sorted_trial(const experiment_config& cfg,
                                     std::uint64_t trial_seed) {
    const auto raw = gen_sorted_scores(cfg.T, cfg.gen.max_score);
    score_pipe pipe(*cfg.rescale, cfg.smooth_noise, cfg.smooth_width,
                    derive_seed(trial_seed, 11));
    std::vector<double> scores(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) scores[i] = pipe(raw[i]);
    const std::vector<std::uint64_t> masks(scores.size(), 1);
    const std::vector<std::string> names{"all"};
    trial_output out;
    if (wants(cfg, method_kind::mvp))
        out.by_method[method_kind::mvp] = run_mvp_stream(
            cfg, masks, scores, 0, derive_seed(trial_seed, 21), pipe.clamps(), names);
    if (wants(cfg, method_kind::aci))
        out.by_method[method_kind::aci] =
            run_aci_stream(cfg, masks, scores, 0, pipe.clamps(), names);
    return out;
}

inline trial_output run_mod_groups_trial(const experiment_config& cfg,
                                         std::uint64_t trial_seed) {
    const std::int64_t total = cfg.warm + cfg.T;
    const auto groups = gen_mod_groups(cfg.gen.mod_group_count);
    rng gen(derive_seed(trial_seed, 31));

    // base raw scores; sigma-hat = their empirical std stands in for the
    // stock-return scale
    std::vector<double> raw(static_cast<std::size_t>(total));
    double sum = 0.0, sum2 = 0.0;
    for (auto& v : raw) {
        v = std::fabs(gen.normal());
        sum += v;
        sum2 += v * v;
    }
    const double n = static_cast<double>(total);
    const double sigma_hat = std::sqrt(std::max(1e-12, sum2 / n - (sum / n) * (sum / n)));

    std::vector<std::uint64_t> masks(static_cast<std::size_t>(total));
    score_pipe pipe(*cfg.rescale, cfg.smooth_noise, cfg.smooth_width,
                    derive_seed(trial_seed, 11));
    std::vector<double> scores(static_cast<std::size_t>(total));
    for (std::int64_t t = 0; t < total; ++t) {
        const double feature = static_cast<double>(t + 1);
        masks[static_cast<std::size_t>(t)] =
            groups.active_mask(std::span<const double>(&feature, 1));
        // additive per-group noise: one draw per containing group
        double perturbed = raw[static_cast<std::size_t>(t)];
        for (std::uint64_t m = masks[static_cast<std::size_t>(t)]; m != 0; m &= m - 1)
            perturbed += sigma_hat * gen.normal();
        scores[static_cast<std::size_t>(t)] = pipe(std::fabs(perturbed));
    }

    const auto names = groups.names();
    trial_output out;
    if (wants(cfg, method_kind::mvp))
        out.by_method[method_kind::mvp] = run_mvp_stream(
            cfg, masks, scores, cfg.warm, derive_seed(trial_seed, 21), pipe.clamps(),
            names);
    if (wants(cfg, method_kind::aci))
        out.by_method[method_kind::aci] =
            run_aci_stream(cfg, masks, scores, cfg.warm, pipe.clamps(), names);
    return out;
}

// Synthetic covariate shift: pool of shift_pool points with d = |beta|
// uniform features; 25% train / 25% calibration / 50% eval pool; eval stream
// resampled from the pool proportional to w(x) = exp(x^T beta); MVP warm
// starts on the calibration fold resampled the same way.
inline trial_output run_shift_trial(const experiment_config& cfg,
                                    std::uint64_t trial_seed) {
    const auto d = static_cast<int>(cfg.gen.beta.size());
    const std::int64_t n = cfg.gen.shift_pool;
    rng gen(derive_seed(trial_seed, 41));

    Eigen::MatrixXd X(n, d);
    for (std::int64_t i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = gen.uniform01();
    Eigen::VectorXd theta(d);
    for (int j = 0; j < d; ++j)
        theta(j) = gen.normal() / std::sqrt(static_cast<double>(d));
    Eigen::VectorXd y = X * theta;
    const double sy = std::sqrt(cfg.gen.sigma_y2);
    for (std::int64_t i = 0; i < n; ++i) y(i) += sy * gen.normal();

    Eigen::Map<const Eigen::VectorXd> beta(cfg.gen.beta.data(), d);
    const Eigen::VectorXd w = (X * beta).array().exp();

    const std::int64_t n_train = n / 4, n_cal = n / 4;
    const std::int64_t pool_lo = n_train + n_cal, pool_n = n - pool_lo;

    online_least_squares model(d, cfg.gen.ridge);
    for (std::int64_t i = 0; i < n_train; ++i)
        model.update(X.row(i).transpose(), y(i));

    const auto transform = [&](double raw, std::int64_t* clamps) {
        if (*cfg.rescale) return rescale_unbounded(raw);
        if (raw > 1.0) {
            ++*clamps;
            return 1.0;
        }
        return raw;
    };
    std::int64_t clamps = 0;
    std::vector<double> cal_scores(static_cast<std::size_t>(n_cal));
    std::vector<double> cal_w(static_cast<std::size_t>(n_cal));
    for (std::int64_t i = 0; i < n_cal; ++i) {
        const std::int64_t row = n_train + i;
        cal_scores[static_cast<std::size_t>(i)] = transform(
            abs_residual_score(model.predict(X.row(row).transpose()), y(row)), &clamps);
        cal_w[static_cast<std::size_t>(i)] = w(row);
    }

    std::vector<double> pool_w(static_cast<std::size_t>(pool_n));
    for (std::int64_t i = 0; i < pool_n; ++i)
        pool_w[static_cast<std::size_t>(i)] = w(pool_lo + i);
    const auto eval_idx = resample_by_weight(pool_w, cfg.T, gen);

    std::vector<double> eval_scores(eval_idx.size()), eval_wt(eval_idx.size());
    for (std::size_t i = 0; i < eval_idx.size(); ++i) {
        const std::int64_t row = pool_lo + eval_idx[i];
        eval_scores[i] = transform(
            abs_residual_score(model.predict(X.row(row).transpose()), y(row)), &clamps);
        eval_wt[i] = w(row);
    }

    const std::vector<std::string> names{"all"};
    const std::vector<std::uint64_t> eval_masks(eval_idx.size(), 1);
    const bucket_grid grid(cfg.m, cfg.r);
    const coverage_target target(cfg.delta);
    trial_output out;

    if (wants(cfg, method_kind::mvp)) {
        const auto warm_idx = resample_by_weight(cal_w, n_cal, gen);
        std::vector<double> scores;
        scores.reserve(warm_idx.size() + eval_scores.size());
        for (auto i : warm_idx)
            scores.push_back(cal_scores[static_cast<std::size_t>(i)]);
        scores.insert(scores.end(), eval_scores.begin(), eval_scores.end());
        const std::vector<std::uint64_t> masks(scores.size(), 1);
        out.by_method[method_kind::mvp] =
            run_mvp_stream(cfg, masks, scores, static_cast<std::int64_t>(warm_idx.size()),
                           derive_seed(trial_seed, 21), clamps, names);
    }

    const auto record_method = [&](method_kind mk, auto&& threshold_fn) {
        method_trial mt;
        for (std::size_t i = 0; i < eval_scores.size(); ++i) {
            round_record rec;
            rec.group_mask = 1;
            rec.q = std::min(threshold_fn(i), 1.0);
            rec.bucket = grid.bucket_index(rec.q);
            rec.score = eval_scores[i];
            rec.covered = cover(rec.q, rec.score);
            mt.tr.append(rec);
        }
        mt.clamped_scores = clamps;
        mt.report =
            build_report(mt.tr, names, grid, target, cfg.epsilon, width_for(cfg));
        mt.stability = threshold_stability(mt.tr, grid);
        out.by_method[mk] = std::move(mt);
    };

    if (wants(cfg, method_kind::weighted_split)) {
        std::vector<std::pair<double, double>> pairs(cal_scores.size());
        for (std::size_t i = 0; i < cal_scores.size(); ++i)
            pairs[i] = {cal_scores[i], cal_w[i]};
        record_method(method_kind::weighted_split, [&](std::size_t i) {
            return weighted_split_threshold(pairs, target, eval_wt[i]);
        });
    }
    if (wants(cfg, method_kind::split)) {
        const double q = split_threshold(cal_scores, target);
        record_method(method_kind::split, [&](std::size_t) { return q; });
    }
    return out;
}

inline trial_output run_csv_scores_trial(const experiment_config& cfg,
                                         const ingested_stream& data,
                                         std::uint64_t trial_seed) {
    score_pipe pipe(*cfg.rescale, cfg.smooth_noise, cfg.smooth_width,
                    derive_seed(trial_seed, 11));
    std::vector<double> scores(data.scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = pipe(data.scores[i]);
    const std::vector<std::uint64_t> masks(scores.size(), 1);
    const std::vector<std::string> names{"all"};
    trial_output out;
    if (wants(cfg, method_kind::mvp))
        out.by_method[method_kind::mvp] = run_mvp_stream(
            cfg, masks, scores, cfg.warm, derive_seed(trial_seed, 21), pipe.clamps(),
            names);
    if (wants(cfg, method_kind::aci))
        out.by_method[method_kind::aci] =
            run_aci_stream(cfg, masks, scores, cfg.warm, pipe.clamps(), names);
    return out;
}

inline trial_output run_one_trial(const experiment_config& cfg,
                                  const ingested_stream* csv_data, int trial) {
    const std::uint64_t trial_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(trial));
    switch (cfg.kind) {
        case experiment_kind::iid_marginal: {
            const auto stream = gen_iid_linear(cfg.warm + cfg.T, cfg.gen.sigma_x2,
                                               cfg.gen.sigma_y2,
                                               derive_seed(trial_seed, 1));
            return run_regression_trial(cfg, stream, group_system::everything(),
                                        trial_seed);
        }
        case experiment_kind::group_noise: {
            const auto stream = gen_group_noise(
                cfg.warm + cfg.T, cfg.gen.group_base_var, cfg.gen.group_g1_var,
                cfg.gen.group_rest_var, cfg.gen.sigma_x2, derive_seed(trial_seed, 1));
            return run_regression_trial(cfg, stream.data, stream.groups, trial_seed);
        }
        case experiment_kind::covariate_shift:
            return run_shift_trial(cfg, trial_seed);
        case experiment_kind::sorted_adversarial:
            return run_sorted_trial(cfg, trial_seed);
        case experiment_kind::mod_groups:
            return run_mod_groups_trial(cfg, trial_seed);
        case experiment_kind::csv_scores:
            return run_csv_scores_trial(cfg, *csv_data, trial_seed);
    }
    throw std::logic_error("run_one_trial: unhandled kind");
}

inline std::vector<std::string> group_names_for(const experiment_config& cfg) {
    switch (cfg.kind) {
        case experiment_kind::group_noise:
            return gen_group_noise(1, cfg.gen.group_base_var, cfg.gen.group_g1_var,
                                   cfg.gen.group_rest_var, cfg.gen.sigma_x2, 0)
                .groups.names();
        case experiment_kind::mod_groups:
            return gen_mod_groups(cfg.gen.mod_group_count).names();
        default:
            return {"all"};
    }
}

}  // namespace detail

inline void write_experiment_outputs(const experiment_result& result);

// Runs every configured method on identical per-trial data (trials fan out
// over a worker pool; per-trial seeds derive from the master seed by trial
// index, so execution order cannot change results). Writes CSV artifacts when
// out_dir is set.
inline experiment_result run_experiment(experiment_config cfg) {
    cfg = resolve_defaults(cfg);
    validate(cfg);

    ingested_stream csv_data;
    if (cfg.kind == experiment_kind::csv_scores) {
        csv_data = ingest_csv(cfg.input_path, csv_schema::scores);
        if (csv_data.scores.empty())
            throw std::invalid_argument("config: input CSV has no rounds");
        cfg.T = static_cast<std::int64_t>(csv_data.scores.size()) - cfg.warm;
        if (cfg.T < 1)
            throw std::invalid_argument("config: warm exceeds input rounds");
    }

    std::vector<detail::trial_output> outputs(static_cast<std::size_t>(cfg.trials));
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    const int n_workers = std::min(cfg.threads, cfg.trials);
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) {
        workers.emplace_back([&] {
            while (true) {
                const int trial = next.fetch_add(1);
                if (trial >= cfg.trials) return;
                try {
                    outputs[static_cast<std::size_t>(trial)] =
                        detail::run_one_trial(cfg, &csv_data, trial);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);

    experiment_result result;
    result.config = cfg;
    result.group_names = detail::group_names_for(cfg);
    for (auto mk : cfg.methods) {
        method_series series;
        series.method = mk;
        std::vector<coverage_report> reports;
        for (auto& out : outputs) {
            auto it = out.by_method.find(mk);
            if (it == out.by_method.end()) continue;
            reports.push_back(it->second.report);
            series.trials.push_back(std::move(it->second));
        }
        series.aggregate = aggregate_trials(reports);
        result.methods.push_back(std::move(series));
    }

    if (!cfg.out_dir.empty()) write_experiment_outputs(result);
    return result;
}

inline void write_experiment_outputs(const experiment_result& result) {
    namespace fs = std::filesystem;
    const auto& cfg = result.config;
    const fs::path root(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec)
        throw std::runtime_error("cannot create output directory " + root.string() +
                                 ": " + ec.message());
    const std::vector<std::string> comments{config_comment(cfg)};
    const auto open = [&](const fs::path& p) {
        std::ofstream f(p);
        if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
        return f;
    };

    if (cfg.emit_transcripts) {
        fs::create_directories(root / "transcripts", ec);
        if (ec)
            throw std::runtime_error("cannot create " + (root / "transcripts").string() +
                                     ": " + ec.message());
        for (const auto& series : result.methods) {
            for (std::size_t k = 0; k < series.trials.size(); ++k) {
                char name[64];
                std::snprintf(name, sizeof(name), "%s_trial%03zu.csv",
                              to_string(series.method).c_str(), k);
                auto f = open(root / "transcripts" / name);
                series.trials[k].tr.write_csv(f, comments);
            }
        }
    }

    {
        auto f = open(root / "summary.csv");
        f << comments.front() << "\n";
        f << "trial,method,rounds,coverage,mean_width,unbounded,mv_error,"
             "mean_abs_step,clamped_scores\n";
        for (const auto& series : result.methods) {
            for (std::size_t k = 0; k < series.trials.size(); ++k) {
                const auto& t = series.trials[k];
                f << k << ',' << to_string(series.method) << ',' << t.report.rounds
                  << ',' << csv::format_double(t.report.marginal_coverage) << ','
                  << csv::format_double(t.report.mean_width) << ','
                  << t.report.unbounded_rounds << ','
                  << csv::format_double(t.report.multivalidity_error) << ','
                  << csv::format_double(t.stability.mean_abs_step) << ','
                  << t.clamped_scores << "\n";
            }
        }
    }

    {
        auto f = open(root / "aggregate.csv");
        f << comments.front() << "\n";
        f << "method,metric,group,q25,median,q75\n";
        const auto row = [&](const std::string& method, const std::string& metric,
                             const std::string& group, const quantile_summary& s) {
            f << method << ',' << metric << ',' << group << ','
              << csv::format_double(s.q25) << ',' << csv::format_double(s.median) << ','
              << csv::format_double(s.q75) << "\n";
        };
        for (const auto& series : result.methods) {
            const auto& a = series.aggregate;
            const auto name = to_string(series.method);
            row(name, "coverage", "", a.marginal_coverage);
            row(name, "mean_width", "", a.mean_width);
            row(name, "mv_error", "", a.multivalidity_error);
            for (std::size_t g = 0; g < a.group_names.size(); ++g) {
                row(name, "group_coverage", a.group_names[g], a.group_coverage[g]);
                row(name, "group_width", a.group_names[g], a.group_width[g]);
            }
        }
    }

    // one full per-cell report per method from the first trial, for inspection
    for (const auto& series : result.methods) {
        if (series.trials.empty()) continue;
        auto f = open(root / ("report_" + to_string(series.method) + "_trial000.csv"));
        write_report_csv(f, series.trials.front().report, comments);
    }
}

}  // namespace mvp
