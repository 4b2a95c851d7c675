#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace mvp {

// Target miscoverage rate delta; prediction sets aim for 1 - delta coverage.
struct coverage_target {
    double delta;

    explicit coverage_target(double d) : delta(d) {
        if (!(d > 0.0 && d < 1.0))
            throw std::invalid_argument("coverage_target: delta must lie in (0,1)");
    }
};

// m calibration buckets B(i) = [(i-1)/m, i/m), i = 1..m, with the last bucket
// closed at 1, refined by factor r into the playable threshold grid
// {0, 1/(rm), ..., 1}.
class bucket_grid {
public:
    bucket_grid(int m, int r = 100) : m_(m), r_(r) {
        if (m < 1) throw std::invalid_argument("bucket_grid: m must be >= 1");
        if (r < 1) throw std::invalid_argument("bucket_grid: r must be >= 1");
    }

    int m() const { return m_; }
    int r() const { return r_; }

    // number of grid steps rm; the grid has rm + 1 points
    std::int64_t grid_steps() const {
        return static_cast<std::int64_t>(m_) * r_;
    }

    double grid_value(std::int64_t k) const {
        return static_cast<double>(k) / static_cast<double>(grid_steps());
    }

    // 1-based bucket of grid point k/(rm)
    int bucket_of_grid_index(std::int64_t k) const {
        if (k < 0 || k > grid_steps())
            throw std::domain_error("bucket_grid: grid index out of range");
        if (k >= grid_steps()) return m_;
        return static_cast<int>(k / r_) + 1;
    }

    // nearest grid index for a threshold that is supposed to be on the grid
    std::int64_t snap_to_grid(double q) const {
        if (!(q >= 0.0 && q <= 1.0))
            throw std::domain_error("bucket_grid: threshold outside [0,1]");
        const double scaled = q * static_cast<double>(grid_steps());
        const std::int64_t k = std::llround(scaled);
        if (std::fabs(scaled - static_cast<double>(k)) > 1e-6)
            throw std::domain_error("bucket_grid: threshold not a grid point");
        return k;
    }

    bool on_grid(double q) const {
        if (!(q >= 0.0 && q <= 1.0)) return false;
        const double scaled = q * static_cast<double>(grid_steps());
        return std::fabs(scaled - std::round(scaled)) <= 1e-6;
    }

    // 1-based bucket index of an arbitrary threshold in [0,1]
    int bucket_index(double q) const {
        if (!(q >= 0.0 && q <= 1.0))
            throw std::domain_error("bucket_grid: threshold outside [0,1]");
        // Floats that are grid points (the common case: thresholds we emitted)
        // are resolved through the exact integer path so bucket boundaries do
        // not depend on rounding of q*m.
        const double scaled = q * static_cast<double>(grid_steps());
        const std::int64_t k = std::llround(scaled);
        if (std::fabs(scaled - static_cast<double>(k)) <= 1e-6)
            return bucket_of_grid_index(k);
        const int i = static_cast<int>(q * m_) + 1;
        return i > m_ ? m_ : i;
    }

    bool operator==(const bucket_grid&) const = default;

private:
    int m_;
    int r_;
};

}  // namespace mvp
