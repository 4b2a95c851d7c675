#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace mvp {

// Rate function f(n) = sqrt((n+1) * log2^{1+eps}(n+2)) controlling the
// per-subsequence coverage tolerance alpha(n) = f(n)/n. Base-2 logs keep
// f(n) >= 1 for every n >= 0.
inline double rate_f(std::int64_t n, double epsilon = 1.0) {
    if (n < 0) throw std::domain_error("rate_f: n must be >= 0");
    const double l = std::log2(static_cast<double>(n) + 2.0);
    return std::sqrt((static_cast<double>(n) + 1.0) * std::pow(l, 1.0 + epsilon));
}

inline double alpha_of(std::int64_t n, double epsilon = 1.0) {
    if (n < 1) throw std::domain_error("alpha_of: n must be >= 1");
    return rate_f(n, epsilon) / static_cast<double>(n);
}

struct k_epsilon_bracket {
    double partial_sum;   // sum of 1/f(n)^2 for n = 0..last_term
    double tail_lower;    // integral lower bound on the remaining tail
    double tail_upper;    // integral upper bound on the remaining tail
    std::int64_t last_term;

    double value() const { return partial_sum + 0.5 * (tail_lower + tail_upper); }
    double half_width() const { return 0.5 * (tail_upper - tail_lower); }
};

// K_eps = sum_{n>=0} 1/f(n)^2. The summand is sandwiched between
// 1/((x+2)log2^{1+eps}(x+2)) and 1/((x+1)log2^{1+eps}(x+1)), both of which
// integrate in closed form, so the tail after N terms is bracketed by
// (ln2/eps)/log2^eps(N+3) and (ln2/eps)/log2^eps(N+1). N doubles until the
// bracket half-width meets tol.
inline k_epsilon_bracket compute_k_epsilon_bracket(double epsilon, double tol = 1e-6) {
    if (epsilon <= 0.0)
        throw std::domain_error("compute_k_epsilon: series diverges for epsilon <= 0");
    if (tol <= 0.0)
        throw std::invalid_argument("compute_k_epsilon: tol must be > 0");

    constexpr double ln2 = 0.6931471805599453;
    const auto tail_at = [&](std::int64_t past) {
        return (ln2 / epsilon) / std::pow(std::log2(static_cast<double>(past)), epsilon);
    };

    double sum = 0.0;
    std::int64_t n = 0;
    std::int64_t N = 1 << 10;
    while (true) {
        for (; n <= N; ++n) {
            const double l = std::log2(static_cast<double>(n) + 2.0);
            sum += 1.0 / ((static_cast<double>(n) + 1.0) * std::pow(l, 1.0 + epsilon));
        }
        k_epsilon_bracket b{sum, tail_at(N + 3), tail_at(N + 1), N};
        if (b.half_width() <= tol) return b;
        if (N >= (std::int64_t{1} << 31))
            throw std::runtime_error("compute_k_epsilon: tol unreachable at this epsilon");
        N *= 2;
    }
}

inline double compute_k_epsilon(double epsilon, double tol = 1e-6) {
    return compute_k_epsilon_bracket(epsilon, tol).value();
}

// Theorem step size eta = sqrt(ln(|G|m) / (2 K |G| m)), always < 1/2 when
// K >= 1 and |G|m >= 2.
inline double compute_eta(std::size_t group_count, int m, double k_eps) {
    const double gm = static_cast<double>(group_count) * static_cast<double>(m);
    if (group_count < 1 || m < 1 || gm < 2.0)
        throw std::invalid_argument(
            "compute_eta: |G|*m must be >= 2 (ln(|G|m) degenerate); supply eta explicitly");
    if (k_eps < 1.0)
        throw std::invalid_argument("compute_eta: K_epsilon must be >= 1");
    const double eta = std::sqrt(std::log(gm) / (2.0 * k_eps * gm));
    const double cap = 0.5 * (1.0 - 1e-12);
    return eta < cap ? eta : cap;
}

// Parameter bundle threaded through predictor and metrics.
struct rate_params {
    double epsilon = 1.0;
    double k_epsilon = 0.0;  // computed

    static rate_params make(double epsilon = 1.0, double tol = 1e-6) {
        return rate_params{epsilon, compute_k_epsilon(epsilon, tol)};
    }
};

}  // namespace mvp
