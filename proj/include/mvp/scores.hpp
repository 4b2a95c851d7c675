#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvp/rng.hpp"

namespace mvp {

// Example-1 conformal scores -------------------------------------------------

inline double abs_residual_score(double prediction, double y) {
    return std::fabs(prediction - y);
}

// CQR score max(lo - y, y - hi); negative strictly inside the band
inline double cqr_score(double lo, double hi, double y) {
    if (lo > hi)
        throw std::domain_error("cqr_score: lower quantile exceeds upper");
    return std::max(lo - y, y - hi);
}

// Cumulative probability mass through y's rank when labels are sorted by
// descending probability (ties by ascending label index).
inline double class_cumulative_score(std::span<const double> probs, std::size_t y) {
    if (y >= probs.size())
        throw std::domain_error("class_cumulative_score: label index out of range");
    double total = 0.0;
    for (double p : probs) {
        if (p < -1e-12)
            throw std::domain_error("class_cumulative_score: negative probability");
        total += p;
    }
    if (std::fabs(total - 1.0) > 1e-6)
        throw std::domain_error("class_cumulative_score: probabilities must sum to 1");
    const double py = probs[y];
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > py || (probs[i] == py && i <= y)) cum += probs[i];
    }
    return std::min(cum, 1.0);
}

// Range handling --------------------------------------------------------------

// monotone bijection [0, inf) -> [0, 1)
inline double rescale_unbounded(double s) {
    if (s < 0.0) throw std::domain_error("rescale_unbounded: score must be >= 0");
    return s / (1.0 + s);
}

// inverse of rescale_unbounded; q = 1 maps to +inf (unbounded set)
inline double unrescale_threshold(double q) {
    if (!(q >= 0.0 && q <= 1.0))
        throw std::domain_error("unrescale_threshold: q outside [0,1]");
    if (q >= 1.0) return std::numeric_limits<double>::infinity();
    return q / (1.0 - q);
}

// Additive one-sided uniform noise enforcing (rho, rm)-smoothness for
// discrete or degenerate score distributions; clamped back into [0,1].
inline double smooth_score(double s, double noise_width, rng& gen) {
    if (!(s >= 0.0 && s <= 1.0))
        throw std::domain_error("smooth_score: score outside [0,1]");
    if (!(noise_width > 0.0))
        throw std::domain_error("smooth_score: noise width must be > 0");
    return std::min(1.0, s + gen.uniform(0.0, noise_width));
}

// Prediction-set inversion -----------------------------------------------------

struct interval_set {
    double lo = 0.0;
    double hi = 0.0;
    bool unbounded = false;

    double width() const {
        return unbounded ? std::numeric_limits<double>::infinity() : hi - lo;
    }
};

struct label_set {
    std::vector<std::size_t> labels;
    bool unbounded = false;  // q admitted the full label set under rescaling
};

// |f(x) - y| <= q  <=>  y in [f(x) - q, f(x) + q]; width 2q. With rescaled
// scores the threshold is mapped back through q/(1-q) first.
inline interval_set invert_abs_residual(double prediction, double q, bool rescaled = false) {
    const double radius = rescaled ? unrescale_threshold(q) : q;
    if (std::isinf(radius))
        return {-std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity(), true};
    return {prediction - radius, prediction + radius, false};
}

inline interval_set invert_quantile_pair(double lo, double hi, double q, bool rescaled = false) {
    if (lo > hi)
        throw std::domain_error("invert_quantile_pair: lower quantile exceeds upper");
    const double inflate = rescaled ? unrescale_threshold(q) : q;
    if (std::isinf(inflate))
        return {-std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity(), true};
    return {lo - inflate, hi + inflate, false};
}

// Longest probability-sorted label prefix with cumulative mass <= q, ties by
// ascending label index.
inline label_set invert_class_cumulative(std::span<const double> probs, double q) {
    if (!(q >= 0.0 && q <= 1.0))
        throw std::domain_error("invert_class_cumulative: q outside [0,1]");
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    label_set out;
    double cum = 0.0;
    for (std::size_t i : order) {
        if (cum + probs[i] > q + 1e-12) break;
        cum += probs[i];
        out.labels.push_back(i);
    }
    out.unbounded = out.labels.size() == probs.size();
    return out;
}

// Width functions handed to report building; widths are measured in label
// units (un-rescaled when the scores were).
struct width_functions {
    // centered interval, width 2q
    static double abs_residual(double q) { return 2.0 * q; }
    // rescaled residual score: width 2 q/(1-q), +inf at q = 1
    static double abs_residual_rescaled(double q) {
        return 2.0 * unrescale_threshold(q);
    }
};

}  // namespace mvp
