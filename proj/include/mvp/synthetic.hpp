#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvp/groups.hpp"
#include "mvp/rng.hpp"

namespace mvp {

// Materialized synthetic regression stream; replayable from (params, seed).
struct regression_stream {
    Eigen::MatrixXd features;  // T x d
    Eigen::VectorXd labels;
    Eigen::VectorXd theta;     // generating coefficients

    std::int64_t rounds() const { return features.rows(); }
    int dimension() const { return static_cast<int>(features.cols()); }
};

namespace detail {

// 10 uniform binary features + 290 N(0, sigma_x^2) continuous ones
inline Eigen::MatrixXd linear_features(std::int64_t T, double sigma_x2, rng& gen) {
    constexpr int d = 300, n_binary = 10;
    Eigen::MatrixXd X(T, d);
    const double sx = std::sqrt(sigma_x2);
    for (std::int64_t t = 0; t < T; ++t) {
        for (int j = 0; j < n_binary; ++j)
            X(t, j) = gen.uniform01() < 0.5 ? 0.0 : 1.0;
        for (int j = n_binary; j < d; ++j)
            X(t, j) = sx * gen.normal();
    }
    return X;
}

inline Eigen::VectorXd draw_theta(int d, rng& gen) {
    // N(0, I/d): unit expected norm keeps pre-convergence residuals on the
    // same scale as converged ones
    Eigen::VectorXd theta(d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int j = 0; j < d; ++j) theta(j) = scale * gen.normal();
    return theta;
}

}  // namespace detail

// y = <theta, x> + N(0, sigma_y^2) over 10 binary + 290 continuous features.
inline regression_stream gen_iid_linear(std::int64_t T, double sigma_x2, double sigma_y2,
                                        std::uint64_t seed) {
    if (T < 1) throw std::invalid_argument("gen_iid_linear: T must be >= 1");
    rng gen(seed);
    regression_stream s;
    s.theta = detail::draw_theta(300, gen);
    s.features = detail::linear_features(T, sigma_x2, gen);
    s.labels = s.features * s.theta;
    const double sy = std::sqrt(sigma_y2);
    for (std::int64_t t = 0; t < T; ++t) s.labels(t) += sy * gen.normal();
    return s;
}

struct group_noise_stream {
    regression_stream data;
    group_system groups;  // 20 groups, two per binary feature
};

// Label noise N(0, base_var + sum_i var_i x_i) where var_1 = g1_var and
// var_2..10 = rest_var. Groups: G_i = {x : x_{ceil((i+1)/2)} = i mod 2} for
// i = 0..19, so G_{2k} and G_{2k+1} are the 0/1 sides of binary feature k+1.
inline group_noise_stream gen_group_noise(std::int64_t T, double base_var, double g1_var,
                                          double rest_var, double sigma_x2,
                                          std::uint64_t seed) {
    if (T < 1) throw std::invalid_argument("gen_group_noise: T must be >= 1");
    rng gen(seed);
    group_noise_stream out;
    out.data.theta = detail::draw_theta(300, gen);
    out.data.features = detail::linear_features(T, sigma_x2, gen);
    out.data.labels = out.data.features * out.data.theta;
    for (std::int64_t t = 0; t < T; ++t) {
        double var = base_var + g1_var * out.data.features(t, 0);
        for (int j = 1; j < 10; ++j) var += rest_var * out.data.features(t, j);
        out.data.labels(t) += std::sqrt(var) * gen.normal();
    }
    for (int i = 0; i < 20; ++i) {
        const int feature = i / 2;
        const double value = static_cast<double>(i % 2);
        out.groups.add("G" + std::to_string(i),
                       [feature, value](std::span<const double> x) {
                           return x[static_cast<std::size_t>(feature)] == value;
                       });
    }
    return out;
}

// The adversarial ramp: score_t = max_score * t / (T-1), t = 0..T-1.
inline std::vector<double> gen_sorted_scores(std::int64_t T, double max_score = 0.5) {
    if (T < 2) throw std::invalid_argument("gen_sorted_scores: T must be >= 2");
    std::vector<double> s(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t)
        s[static_cast<std::size_t>(t)] =
            max_score * static_cast<double>(t) / static_cast<double>(T - 1);
    return s;
}

// Divisibility groups over round indices: G_j = {t : t mod j == 0}, j = 1..count.
// The feature vector of round t is {double(t)}.
inline group_system gen_mod_groups(int count) {
    if (count < 1) throw std::invalid_argument("gen_mod_groups: count must be >= 1");
    group_system g;
    for (int j = 1; j <= count; ++j) {
        g.add("mod" + std::to_string(j), [j](std::span<const double> x) {
            return std::llround(x[0]) % j == 0;
        });
    }
    return g;
}

// Rejection-sample `count` indices from {0..weights.size()-1} with replacement,
// acceptance proportional to the weights.
inline std::vector<std::int64_t> resample_by_weight(std::span<const double> weights,
                                                    std::int64_t count, rng& gen) {
    if (weights.empty())
        throw std::invalid_argument("resample_by_weight: empty weight vector");
    double wmax = 0.0;
    for (double w : weights) {
        if (!(w > 0.0))
            throw std::domain_error("resample_by_weight: weights must be > 0");
        wmax = std::max(wmax, w);
    }
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(count));
    const auto n = static_cast<std::int64_t>(weights.size());
    while (static_cast<std::int64_t>(out.size()) < count) {
        const std::int64_t j = gen.uniform_index(n);
        if (gen.uniform01() < weights[static_cast<std::size_t>(j)] / wmax)
            out.push_back(j);
    }
    return out;
}

// Covariate shift: resample the base stream with replacement, acceptance
// proportional to w(x) = exp(x^T beta) over the first |beta| features.
inline regression_stream gen_covariate_shift(const regression_stream& base,
                                             std::span<const double> beta,
                                             std::int64_t count, std::uint64_t seed) {
    if (base.dimension() < static_cast<int>(beta.size()))
        throw std::invalid_argument("gen_covariate_shift: feature dimension < |beta|");
    rng gen(seed);
    std::vector<double> w(static_cast<std::size_t>(base.rounds()));
    for (std::int64_t t = 0; t < base.rounds(); ++t) {
        double dot = 0.0;
        for (std::size_t j = 0; j < beta.size(); ++j)
            dot += base.features(t, static_cast<int>(j)) * beta[j];
        w[static_cast<std::size_t>(t)] = std::exp(dot);
    }
    const auto idx = resample_by_weight(w, count, gen);
    regression_stream out;
    out.theta = base.theta;
    out.features.resize(count, base.dimension());
    out.labels.resize(count);
    for (std::int64_t i = 0; i < count; ++i) {
        out.features.row(i) = base.features.row(idx[static_cast<std::size_t>(i)]);
        out.labels(i) = base.labels(idx[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace mvp
