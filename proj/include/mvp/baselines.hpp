#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mvp/grid.hpp"

namespace mvp {

// Split conformal threshold: the ceil((1-delta)(n+1))-th smallest calibration
// score. Rank past n means no finite score certifies coverage (trivial set,
// +inf); rank below 1 is the degenerate empty set (-inf).
inline double split_threshold(std::span<const double> scores, coverage_target target) {
    const std::int64_t n = static_cast<std::int64_t>(scores.size());
    if (n == 0)
        throw std::invalid_argument("split_threshold: empty calibration set");
    const auto rank = static_cast<std::int64_t>(
        std::ceil((1.0 - target.delta) * static_cast<double>(n + 1)));
    if (rank > n) return std::numeric_limits<double>::infinity();
    if (rank < 1) return -std::numeric_limits<double>::infinity();
    std::vector<double> tmp(scores.begin(), scores.end());
    std::nth_element(tmp.begin(), tmp.begin() + (rank - 1), tmp.end());
    return tmp[rank - 1];
}

// Growing calibration set with incremental order-statistic insertion.
class split_calibrator {
public:
    explicit split_calibrator(coverage_target target) : target_(target) {}

    void add(double score) {
        sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), score), score);
    }

    std::size_t size() const { return sorted_.size(); }
    coverage_target target() const { return target_; }

    double threshold() const {
        const std::int64_t n = static_cast<std::int64_t>(sorted_.size());
        if (n == 0)
            throw std::invalid_argument("split_calibrator: empty calibration set");
        const auto rank = static_cast<std::int64_t>(
            std::ceil((1.0 - target_.delta) * static_cast<double>(n + 1)));
        if (rank > n) return std::numeric_limits<double>::infinity();
        if (rank < 1) return -std::numeric_limits<double>::infinity();
        return sorted_[static_cast<std::size_t>(rank - 1)];
    }

private:
    coverage_target target_;
    std::vector<double> sorted_;
};

// Weighted split conformal threshold (covariate shift): smallest calibration
// score s* whose cumulative weight reaches (1-delta) of the total mass, where
// the total includes the test point's weight (its mass sits above every
// finite score). +inf when the calibration mass cannot reach the level.
inline double weighted_split_threshold(std::span<const std::pair<double, double>> scored_weights,
                                       coverage_target target, double test_weight) {
    if (scored_weights.empty())
        throw std::invalid_argument("weighted_split_threshold: empty calibration set");
    if (!(test_weight > 0.0))
        throw std::domain_error("weighted_split_threshold: test weight must be > 0");
    double total = test_weight;
    for (const auto& [s, w] : scored_weights) {
        if (!(w > 0.0))
            throw std::domain_error("weighted_split_threshold: weights must be > 0");
        total += w;
    }
    std::vector<std::pair<double, double>> sorted(scored_weights.begin(),
                                                  scored_weights.end());
    std::sort(sorted.begin(), sorted.end());
    const double level = (1.0 - target.delta) * total;
    double mass = 0.0;
    for (const auto& [s, w] : sorted) {
        mass += w;
        if (mass >= level) return s;
    }
    return std::numeric_limits<double>::infinity();
}

// Most conservative (largest) threshold over the active groups; marginal
// fallback when the point belongs to none.
inline double group_conservative_threshold(std::span<const double> per_group,
                                           std::uint64_t active_mask,
                                           double marginal_fallback) {
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    std::uint64_t mask = active_mask;
    while (mask != 0) {
        const int g = std::countr_zero(mask);
        mask &= mask - 1;
        if (static_cast<std::size_t>(g) >= per_group.size())
            throw std::invalid_argument(
                "group_conservative_threshold: active group has no threshold");
        best = std::max(best, per_group[static_cast<std::size_t>(g)]);
        any = true;
    }
    return any ? best : marginal_fallback;
}

// Adaptive Conformal Inference: q_t is the empirical (1 - alpha_t)-quantile
// of the last `lookback` scores, then alpha_{t+1} = alpha_t + gamma (delta -
// err_t). The first `offset` rounds are burn-in: state updates normally,
// callers exclude them from metrics.
class aci {
public:
    struct params {
        double gamma = 0.005;
        int lookback = 100;
        int offset = 10;
    };

    aci(coverage_target target, params p = {})
        : target_(target), params_(p), alpha_(target.delta) {
        if (!(p.gamma > 0.0)) throw std::invalid_argument("aci: gamma must be > 0");
        if (p.lookback < 1) throw std::invalid_argument("aci: lookback must be >= 1");
        if (p.offset < 0) throw std::invalid_argument("aci: offset must be >= 0");
    }

    double alpha() const { return alpha_; }
    std::int64_t rounds() const { return rounds_; }
    bool in_burn_in() const { return rounds_ < params_.offset; }

    double predict() const {
        if (alpha_ <= 0.0 || window_.empty()) return 1.0;
        // alpha >= 1 would call for the empty set; 0 is the closest threshold
        // representable in [0,1] (differs only on scores exactly 0)
        if (alpha_ >= 1.0) return 0.0;
        const std::int64_t k = static_cast<std::int64_t>(window_.size());
        auto rank = static_cast<std::int64_t>(
            std::ceil((1.0 - alpha_) * static_cast<double>(k)));
        rank = std::clamp<std::int64_t>(rank, 1, k);
        std::vector<double> tmp(window_.begin(), window_.end());
        std::nth_element(tmp.begin(), tmp.begin() + (rank - 1), tmp.end());
        return tmp[rank - 1];
    }

    // returns whether the score was covered at threshold q
    bool observe(double q, double score) {
        const bool err = score > q;
        alpha_ += params_.gamma * (target_.delta - (err ? 1.0 : 0.0));
        // the running level may leave [0,1] (that is what triggers the
        // saturated thresholds above); a wide clamp only stops unbounded
        // drift when callers feed scores outside [0,1]
        alpha_ = std::clamp(alpha_, -1.0, 2.0);
        if (static_cast<int>(window_.size()) == params_.lookback) {
            window_[head_] = score;
            head_ = (head_ + 1) % params_.lookback;
        } else {
            window_.push_back(score);
        }
        ++rounds_;
        return !err;
    }

    double step(double score) {
        const double q = predict();
        observe(q, score);
        return q;
    }

private:
    coverage_target target_;
    params params_;
    double alpha_;
    std::vector<double> window_;
    std::size_t head_ = 0;
    std::int64_t rounds_ = 0;
};

}  // namespace mvp
