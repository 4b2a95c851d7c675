// Benchmark CLI: run the synthetic experiments, rebuild metrics from a
// transcript CSV, or emit a synthetic dataset CSV.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mvp/mvp.hpp"

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("MVP_OUT_DIR");
    return env ? env : "out";
}

std::vector<mvp::method_kind> parse_methods(const std::string& csv_list) {
    std::vector<mvp::method_kind> out;
    std::stringstream ss(csv_list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(mvp::parse_method_kind(item));
    return out;
}

int cmd_run(const std::string& experiment, const std::string& methods,
            const std::string& variant, double eta, mvp::experiment_config cfg) {
    cfg.kind = mvp::parse_experiment_kind(experiment);
    if (!methods.empty()) cfg.methods = parse_methods(methods);
    if (!variant.empty()) cfg.variant = mvp::parse_variant(variant);
    if (eta > 0.0) cfg.eta = eta;
    const auto result = mvp::run_experiment(cfg);

    std::cout << mvp::config_comment(result.config) << "\n";
    for (const auto& series : result.methods) {
        const auto& a = series.aggregate;
        std::cout << "\n== " << mvp::to_string(series.method) << " ("
                  << series.trials.size() << " trials) ==\n";
        std::cout << "coverage   median " << a.marginal_coverage.median << "  [q25 "
                  << a.marginal_coverage.q25 << ", q75 " << a.marginal_coverage.q75
                  << "]\n";
        std::cout << "mean width median " << a.mean_width.median << "  [q25 "
                  << a.mean_width.q25 << ", q75 " << a.mean_width.q75 << "]\n";
        std::cout << "mv error   median " << a.multivalidity_error.median << "\n";
        if (a.group_names.size() > 1) {
            for (std::size_t g = 0; g < a.group_names.size(); ++g)
                std::cout << "  " << a.group_names[g] << " coverage median "
                          << a.group_coverage[g].median << "  width median "
                          << a.group_width[g].median << "\n";
        }
    }
    if (!result.config.out_dir.empty())
        std::cout << "\nartifacts written to " << result.config.out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& input, const std::string& out_path, double delta,
               int m, int r, double epsilon, bool rescaled_widths) {
    std::ifstream in(input);
    if (!in) {
        std::cerr << "cannot open " << input << "\n";
        return 1;
    }
    const auto tr = mvp::transcript::read_csv(in);
    if (tr.empty()) {
        std::cerr << input << ": no rounds\n";
        return 1;
    }
    std::uint64_t all_masks = 0;
    for (const auto& rec : tr) all_masks |= rec.group_mask;
    std::size_t n_groups = 1;
    for (std::size_t g = 0; g < 64; ++g)
        if (all_masks >> g & 1) n_groups = g + 1;
    std::vector<std::string> names;
    names.reserve(n_groups);
    for (std::size_t g = 0; g < n_groups; ++g) names.push_back("g" + std::to_string(g));

    const mvp::width_function width =
        rescaled_widths
            ? mvp::width_function(
                  [](double q) { return mvp::width_functions::abs_residual_rescaled(q); })
            : mvp::width_function(
                  [](double q) { return mvp::width_functions::abs_residual(q); });
    const auto rep = mvp::build_report(tr, names, mvp::bucket_grid(m, r),
                                       mvp::coverage_target(delta), epsilon, width);
    mvp::print_report_table(std::cout, rep);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) {
            std::cerr << "cannot open " << out_path << " for writing\n";
            return 1;
        }
        mvp::write_report_csv(out, rep);
        std::cout << "report written to " << out_path << "\n";
    }
    return 0;
}

int cmd_gen(const std::string& experiment, std::int64_t T, std::uint64_t seed,
            const std::string& out_path, const mvp::generator_params& gp) {
    std::ofstream out(out_path);
    if (!out) {
        std::cerr << "cannot open " << out_path << " for writing\n";
        return 1;
    }
    const auto kind = mvp::parse_experiment_kind(experiment);
    const auto d = [](double v) { return mvp::csv::format_double(v); };
    switch (kind) {
        case mvp::experiment_kind::sorted_adversarial: {
            const auto scores = mvp::gen_sorted_scores(T, gp.max_score);
            out << "t,score\n";
            for (std::size_t i = 0; i < scores.size(); ++i)
                out << (i + 1) << ',' << d(scores[i]) << "\n";
            break;
        }
        case mvp::experiment_kind::iid_marginal:
        case mvp::experiment_kind::group_noise: {
            mvp::regression_stream s;
            if (kind == mvp::experiment_kind::iid_marginal)
                s = mvp::gen_iid_linear(T, gp.sigma_x2, gp.sigma_y2, seed);
            else
                s = mvp::gen_group_noise(T, gp.group_base_var, gp.group_g1_var,
                                         gp.group_rest_var, gp.sigma_x2, seed)
                        .data;
            for (int j = 0; j < s.dimension(); ++j) out << "x_" << j << ',';
            out << "y\n";
            for (std::int64_t t = 0; t < s.rounds(); ++t) {
                for (int j = 0; j < s.dimension(); ++j) out << d(s.features(t, j)) << ',';
                out << d(s.labels(t)) << "\n";
            }
            break;
        }
        default:
            std::cerr << "gen supports iid_marginal, group_noise, sorted_adversarial\n";
            return 1;
    }
    std::cout << "dataset written to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MultiValid Prediction benchmark harness"};
    app.require_subcommand(1);

    // run ----------------------------------------------------------------
    auto* run = app.add_subcommand("run", "run an experiment");
    run->set_config("--config", "", "flat key=value config file; flags win");
    std::string experiment, methods, variant;
    double eta = 0.0;
    mvp::experiment_config cfg;
    cfg.out_dir = default_out_dir();
    run->add_option("--experiment", experiment, "experiment kind")->required();
    run->add_option("--delta", cfg.delta, "target miscoverage rate");
    run->add_option("--m", cfg.m, "bucket count");
    run->add_option("--r", cfg.r, "grid refinement factor");
    run->add_option("--epsilon", cfg.epsilon, "rate-function epsilon");
    run->add_option("--eta", eta, "step size (default: theory value)");
    run->add_option("--variant", variant, "normalized|unnormalized");
    run->add_option("--methods", methods, "comma-separated method list");
    run->add_option("--trials", cfg.trials, "independent trials");
    run->add_option("--T", cfg.T, "measured rounds per trial");
    run->add_option("--seed", cfg.seed, "master seed");
    run->add_option("--out-dir", cfg.out_dir, "output directory (env MVP_OUT_DIR)");
    run->add_flag("--rescale", [&cfg](std::int64_t) { cfg.rescale = true; },
                  "map raw scores through s/(1+s)");
    run->add_flag("--smooth-noise", cfg.smooth_noise, "add smoothing noise to scores");
    run->add_option("--smooth-width", cfg.smooth_width, "smoothing width (default 1/(rm))");
    run->add_option("--gamma", cfg.aci_params.gamma, "ACI step size");
    run->add_option("--lookback", cfg.aci_params.lookback, "ACI window length");
    run->add_option("--offset", cfg.aci_params.offset, "ACI burn-in rounds");
    run->add_option("--warm", cfg.warm, "warm-start rounds excluded from metrics");
    run->add_option("--threads", cfg.threads, "worker threads (default: hardware)");
    run->add_option("--input", cfg.input_path, "input CSV for csv_scores");
    run->add_flag("--no-transcripts", [&cfg](std::int64_t) { cfg.emit_transcripts = false; },
                  "skip per-trial transcript files");
    run->add_option("--shift-pool", cfg.gen.shift_pool, "covariate-shift pool size");
    run->add_option("--mod-groups", cfg.gen.mod_group_count, "divisibility group count");

    // report -------------------------------------------------------------
    auto* report = app.add_subcommand("report", "rebuild metrics from a transcript CSV");
    std::string rep_input, rep_out;
    double rep_delta = 0.1, rep_eps = 1.0;
    int rep_m = 40, rep_r = 100;
    bool rep_rescaled = false;
    report->add_option("--input", rep_input, "transcript CSV")->required();
    report->add_option("--out", rep_out, "report CSV path");
    report->add_option("--delta", rep_delta, "target miscoverage rate");
    report->add_option("--m", rep_m, "bucket count");
    report->add_option("--r", rep_r, "grid refinement factor");
    report->add_option("--epsilon", rep_eps, "rate-function epsilon");
    report->add_flag("--rescaled-widths", rep_rescaled,
                     "widths as 2q/(1-q) for rescaled scores");

    // gen ----------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "emit a synthetic dataset CSV");
    std::string gen_experiment, gen_out = "dataset.csv";
    std::int64_t gen_T = 1000;
    std::uint64_t gen_seed = 1;
    mvp::generator_params gen_params;
    gen->add_option("--experiment", gen_experiment, "generator kind")->required();
    gen->add_option("--T", gen_T, "rounds");
    gen->add_option("--seed", gen_seed, "seed");
    gen->add_option("--out", gen_out, "output path");
    gen->add_option("--max-score", gen_params.max_score, "sorted ramp endpoint");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(experiment, methods, variant, eta, cfg);
        if (report->parsed())
            return cmd_report(rep_input, rep_out, rep_delta, rep_m, rep_r, rep_eps,
                              rep_rescaled);
        if (gen->parsed())
            return cmd_gen(gen_experiment, gen_T, gen_seed, gen_out, gen_params);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
