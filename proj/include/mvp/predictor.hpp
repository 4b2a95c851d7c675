#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mvp/grid.hpp"
#include "mvp/groups.hpp"
#include "mvp/rates.hpp"
#include "mvp/rng.hpp"
#include "mvp/transcript.hpp"

namespace mvp {

inline bool cover(double q, double s) { return s <= q; }

// v_delta(q, s) = Cover(q, s) - (1 - delta): +delta when covered, -(1-delta)
// when missed.
inline double coverage_deviation(double q, double s, coverage_target target) {
    return cover(q, s) ? target.delta : -(1.0 - target.delta);
}

enum class mvp_variant { normalized, unnormalized };

struct decision_trace {
    enum class branch_kind { all_positive, all_negative, sign_change };

    std::vector<double> signals;  // C^i for i = 1..m
    branch_kind branch = branch_kind::sign_change;
    int boundary = 0;             // i* (1-based), 0 outside the sign_change branch
    double left_probability = 0;  // p, probability of playing i*/m - 1/(rm)
    double uniform_draw = std::numeric_limits<double>::quiet_NaN();
};

struct threshold_choice {
    double q = 0.0;
    std::int64_t grid_index = 0;
    decision_trace trace;
};

struct predictor_config {
    bucket_grid grid{40, 100};
    coverage_target target{0.1};
    double epsilon = 1.0;
    // defaults to compute_eta(|G|, m, K_epsilon) when unset
    std::optional<double> eta;
    mvp_variant variant = mvp_variant::normalized;
    std::uint64_t seed = 0;
};

// The MVP state machine: per-(group, bucket) round counts and signed coverage
// errors, exponential-potential threshold selection, and the surrogate-loss
// diagnostics. Single-writer sequential; independent instances may run in
// parallel.
class predictor {
public:
    predictor(predictor_config cfg, std::size_t group_count)
        : cfg_(cfg),
          group_count_(group_count),
          cells_(group_count * static_cast<std::size_t>(cfg.grid.m())),
          rng_(cfg.seed) {
        if (group_count < 1 || group_count > 64)
            throw std::invalid_argument("predictor: group count must be in [1, 64]");
        eta_ = cfg.eta ? *cfg.eta
                       : compute_eta(group_count, cfg.grid.m(),
                                     compute_k_epsilon(cfg.epsilon));
        if (!(eta_ > 0.0 && eta_ < 0.5))
            throw std::invalid_argument("predictor: eta must lie in (0, 1/2)");
    }

    const predictor_config& config() const { return cfg_; }
    double eta() const { return eta_; }
    std::size_t group_count() const { return group_count_; }
    std::int64_t rounds() const { return rounds_; }
    std::int64_t saturation_count() const { return saturations_; }

    std::int64_t cell_count(std::size_t g, int bucket) const {
        return cell(g, bucket).n;
    }

    // V^{G,i} materialized from integer counters: covered - (1-delta) * n
    double cell_coverage_error(std::size_t g, int bucket) const {
        const auto& c = cell(g, bucket);
        return static_cast<double>(c.covered) -
               (1.0 - cfg_.target.delta) * static_cast<double>(c.n);
    }

    // C^i(x): sum over active groups of the odd potential derivative.
    // Normalized: 2 sinh(eta V / f(n)) / f(n); un-normalized: 2 sinh(eta V).
    double bucket_signal(std::uint64_t active_mask, int bucket) const {
        double total = 0.0;
        for_each_group(active_mask, [&](std::size_t g) {
            const auto& c = cell(g, bucket);
            const double v = static_cast<double>(c.covered) -
                             (1.0 - cfg_.target.delta) * static_cast<double>(c.n);
            if (cfg_.variant == mvp_variant::normalized) {
                const double fn = rate_f(c.n, cfg_.epsilon);
                total += 2.0 * std::sinh(saturate(eta_ * v / fn)) / fn;
            } else {
                total += 2.0 * std::sinh(saturate(eta_ * v));
            }
        });
        return total;
    }

    // One round of Algorithm 1. Consumes exactly one uniform variate in the
    // sign-change branch (even when p is 0 or 1) so transcripts replay.
    threshold_choice predict(std::uint64_t active_mask) {
        const int m = cfg_.grid.m();
        const std::int64_t r = cfg_.grid.r();
        threshold_choice out;
        out.trace.signals.resize(m);
        bool all_pos = true, all_neg = true;
        for (int i = 1; i <= m; ++i) {
            const double c = bucket_signal(active_mask, i);
            out.trace.signals[i - 1] = c;
            all_pos = all_pos && c > 0.0;
            all_neg = all_neg && c < 0.0;
        }
        if (all_pos) {
            out.trace.branch = decision_trace::branch_kind::all_positive;
            out.grid_index = 0;
            out.q = 0.0;
            return out;
        }
        if (all_neg) {
            out.trace.branch = decision_trace::branch_kind::all_negative;
            out.grid_index = cfg_.grid.grid_steps();
            out.q = 1.0;
            return out;
        }
        // smallest i* with C^{i*} C^{i*+1} <= 0; one always exists for m >= 2.
        // For m == 1 the only non-strict case is C^1 == 0, handled as i* = 1.
        int istar = m == 1 ? 1 : 0;
        for (int i = 1; i < m; ++i) {
            if (out.trace.signals[i - 1] * out.trace.signals[i] <= 0.0) {
                istar = i;
                break;
            }
        }
        const double left = std::fabs(out.trace.signals[istar - 1]);
        const double right = istar < m ? std::fabs(out.trace.signals[istar]) : 0.0;
        const double p = (left + right) == 0.0 ? 1.0 : right / (left + right);
        const double u = rng_.uniform01();
        out.trace.branch = decision_trace::branch_kind::sign_change;
        out.trace.boundary = istar;
        out.trace.left_probability = p;
        out.trace.uniform_draw = u;
        out.grid_index = u < p ? istar * r - 1 : istar * r;
        out.q = cfg_.grid.grid_value(out.grid_index);
        return out;
    }

    // Observe the realized score for a played threshold: every active group's
    // cell at q's bucket gains one round and the coverage deviation.
    round_record update(std::uint64_t active_mask, double q, double score) {
        if (!(score >= 0.0 && score <= 1.0))
            throw std::domain_error(
                "predictor::update: score outside [0,1]; rescale scores first "
                "(see rescale_unbounded)");
        const std::int64_t k = cfg_.grid.snap_to_grid(q);
        const int bucket = cfg_.grid.bucket_of_grid_index(k);
        const bool covered = cover(q, score);
        for_each_group(active_mask, [&](std::size_t g) {
            auto& c = cell(g, bucket);
            c.n += 1;
            if (covered) c.covered += 1;
        });
        ++rounds_;
        round_record rec;
        rec.t = rounds_;
        rec.group_mask = active_mask;
        rec.q = q;
        rec.bucket = bucket;
        rec.score = score;
        rec.covered = covered;
        return rec;
    }

    // Surrogate potential L_t = sum_{G,i} 2 cosh(eta V / f(n)); 2|G|m at the
    // fresh state.
    double surrogate_loss() const {
        double total = 0.0;
        const int m = cfg_.grid.m();
        for (std::size_t g = 0; g < group_count_; ++g) {
            for (int i = 1; i <= m; ++i) {
                const auto& c = cell(g, i);
                const double v = static_cast<double>(c.covered) -
                                 (1.0 - cfg_.target.delta) * static_cast<double>(c.n);
                const double fn = rate_f(c.n, cfg_.epsilon);
                total += 2.0 * std::cosh(saturate(eta_ * v / fn));
            }
        }
        return total;
    }

    // max over visited cells of |V| / f(n) -- the multivalidity certificate
    double multivalidity_error() const {
        double worst = 0.0;
        const int m = cfg_.grid.m();
        for (std::size_t g = 0; g < group_count_; ++g) {
            for (int i = 1; i <= m; ++i) {
                const auto& c = cell(g, i);
                if (c.n == 0) continue;
                const double v = static_cast<double>(c.covered) -
                                 (1.0 - cfg_.target.delta) * static_cast<double>(c.n);
                const double e = std::fabs(v) / rate_f(c.n, cfg_.epsilon);
                if (e > worst) worst = e;
            }
        }
        return worst;
    }

private:
    struct counters {
        std::int64_t n = 0;
        std::int64_t covered = 0;
    };

    const counters& cell(std::size_t g, int bucket) const {
        return cells_[g * static_cast<std::size_t>(cfg_.grid.m()) +
                      static_cast<std::size_t>(bucket - 1)];
    }
    counters& cell(std::size_t g, int bucket) {
        return cells_[g * static_cast<std::size_t>(cfg_.grid.m()) +
                      static_cast<std::size_t>(bucket - 1)];
    }

    template <typename Fn>
    void for_each_group(std::uint64_t mask, Fn&& fn) const {
        while (mask != 0) {
            const int g = std::countr_zero(mask);
            fn(static_cast<std::size_t>(g));
            mask &= mask - 1;
        }
    }

    // exp argument cap; realized adversarial runs can push eta*V past the
    // range the in-expectation analysis keeps it in
    double saturate(double arg) const {
        if (arg > 700.0) {
            ++saturations_;
            return 700.0;
        }
        if (arg < -700.0) {
            ++saturations_;
            return -700.0;
        }
        return arg;
    }

    predictor_config cfg_;
    std::size_t group_count_;
    std::vector<counters> cells_;
    rng rng_;
    double eta_ = 0.0;
    std::int64_t rounds_ = 0;
    mutable std::int64_t saturations_ = 0;
};

}  // namespace mvp
