#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "mvp/csv.hpp"
#include "mvp/grid.hpp"
#include "mvp/rates.hpp"
#include "mvp/transcript.hpp"

namespace mvp {

using width_function = std::function<double(double q)>;

struct cell_stat {
    int group = 0;        // 0-based group index
    int bucket = 0;       // 1-based bucket
    std::int64_t n = 0;
    double coverage = 0;  // H-bar over the cell
    double v = 0;         // signed coverage error V
    double mv_error = 0;  // |V| / f(n)
    double alpha_ref = 0; // f(n) / n
};

struct group_stat {
    int group = 0;
    std::string name;
    std::int64_t n = 0;
    double coverage = 0;
    double mean_width = 0;          // over rounds with finite width
    std::int64_t unbounded = 0;     // rounds whose set was unbounded
};

struct coverage_report {
    std::int64_t rounds = 0;
    double marginal_coverage = 0;
    double mean_width = 0;
    std::int64_t unbounded_rounds = 0;
    double multivalidity_error = 0;  // max over cells
    std::vector<group_stat> groups;
    std::vector<cell_stat> cells;    // cells with n > 0 only
    std::vector<std::int64_t> threshold_histogram;  // grid index 0..rm
    double delta = 0;
    int m = 0;
    int r = 0;
    double epsilon = 1.0;
};

// Re-derives every figure-of-merit from a transcript: marginal and per-group
// empirical coverage, widths via the adapter's width function, and the
// per-(group, bucket) multivalidity table.
inline coverage_report build_report(const transcript& tr,
                                    const std::vector<std::string>& group_names,
                                    const bucket_grid& grid, coverage_target target,
                                    double epsilon, const width_function& width_fn) {
    if (tr.empty()) throw std::invalid_argument("build_report: empty transcript");
    const std::size_t n_groups = group_names.size();
    if (n_groups == 0 || n_groups > 64)
        throw std::invalid_argument("build_report: need between 1 and 64 group names");

    coverage_report rep;
    rep.delta = target.delta;
    rep.m = grid.m();
    rep.r = grid.r();
    rep.epsilon = epsilon;
    rep.rounds = static_cast<std::int64_t>(tr.size());
    rep.threshold_histogram.assign(static_cast<std::size_t>(grid.grid_steps()) + 1, 0);

    struct cell_acc { std::int64_t n = 0, covered = 0; };
    std::vector<cell_acc> cells(n_groups * static_cast<std::size_t>(grid.m()));
    struct group_acc {
        std::int64_t n = 0, covered = 0, unbounded = 0;
        double width_sum = 0;
    };
    std::vector<group_acc> gacc(n_groups);

    std::int64_t covered_total = 0, unbounded_total = 0;
    double width_sum = 0;

    for (const auto& r : tr) {
        if (r.covered) ++covered_total;
        const double w = width_fn(r.q);
        const bool unb = std::isinf(w);
        if (unb) ++unbounded_total; else width_sum += w;

        const double clamped_q = std::clamp(r.q, 0.0, 1.0);
        const auto hist_idx = static_cast<std::size_t>(std::clamp<std::int64_t>(
            std::llround(clamped_q * static_cast<double>(grid.grid_steps())), 0,
            grid.grid_steps()));
        ++rep.threshold_histogram[hist_idx];

        const int bucket = grid.bucket_index(clamped_q);
        for (std::uint64_t mask = r.group_mask; mask != 0; mask &= mask - 1) {
            const auto g = static_cast<std::size_t>(std::countr_zero(mask));
            if (g >= n_groups)
                throw std::invalid_argument("build_report: group mask exceeds group names");
            auto& c = cells[g * static_cast<std::size_t>(grid.m()) +
                            static_cast<std::size_t>(bucket - 1)];
            c.n += 1;
            if (r.covered) c.covered += 1;
            auto& ga = gacc[g];
            ga.n += 1;
            if (r.covered) ga.covered += 1;
            if (unb) ga.unbounded += 1; else ga.width_sum += w;
        }
    }

    rep.marginal_coverage = static_cast<double>(covered_total) /
                            static_cast<double>(rep.rounds);
    rep.unbounded_rounds = unbounded_total;
    const std::int64_t bounded = rep.rounds - unbounded_total;
    rep.mean_width = bounded > 0 ? width_sum / static_cast<double>(bounded) : 0.0;

    for (std::size_t g = 0; g < n_groups; ++g) {
        const auto& ga = gacc[g];
        group_stat gs;
        gs.group = static_cast<int>(g);
        gs.name = group_names[g];
        gs.n = ga.n;
        gs.coverage = ga.n > 0 ? static_cast<double>(ga.covered) /
                                 static_cast<double>(ga.n)
                               : 0.0;
        const std::int64_t gb = ga.n - ga.unbounded;
        gs.mean_width = gb > 0 ? ga.width_sum / static_cast<double>(gb) : 0.0;
        gs.unbounded = ga.unbounded;
        rep.groups.push_back(std::move(gs));

        for (int i = 1; i <= grid.m(); ++i) {
            const auto& c = cells[g * static_cast<std::size_t>(grid.m()) +
                                  static_cast<std::size_t>(i - 1)];
            if (c.n == 0) continue;  // absent, not zero-coverage
            cell_stat cs;
            cs.group = static_cast<int>(g);
            cs.bucket = i;
            cs.n = c.n;
            cs.coverage = static_cast<double>(c.covered) / static_cast<double>(c.n);
            cs.v = static_cast<double>(c.covered) -
                   (1.0 - target.delta) * static_cast<double>(c.n);
            cs.mv_error = std::fabs(cs.v) / rate_f(c.n, epsilon);
            cs.alpha_ref = alpha_of(c.n, epsilon);
            rep.multivalidity_error = std::max(rep.multivalidity_error, cs.mv_error);
            rep.cells.push_back(std::move(cs));
        }
    }
    return rep;
}

struct stability_summary {
    double mean_abs_step = 0;  // mean |q_{t+1} - q_t|
    std::vector<std::int64_t> histogram;  // same binning as the report histogram
};

// Step-size statistics plus the threshold histogram used to spot the
// all-or-nothing pattern (mass piling up at q = 1).
inline stability_summary threshold_stability(const transcript& tr, const bucket_grid& grid) {
    if (tr.size() < 2)
        throw std::invalid_argument("threshold_stability: need at least 2 rounds");
    stability_summary out;
    out.histogram.assign(static_cast<std::size_t>(grid.grid_steps()) + 1, 0);
    double step_sum = 0;
    for (std::size_t i = 0; i < tr.size(); ++i) {
        const double q = std::clamp(tr[i].q, 0.0, 1.0);
        const auto idx = static_cast<std::size_t>(std::clamp<std::int64_t>(
            std::llround(q * static_cast<double>(grid.grid_steps())), 0,
            grid.grid_steps()));
        ++out.histogram[idx];
        if (i > 0) step_sum += std::fabs(tr[i].q - tr[i - 1].q);
    }
    out.mean_abs_step = step_sum / static_cast<double>(tr.size() - 1);
    return out;
}

struct quantile_summary {
    double q25 = 0, median = 0, q75 = 0;
};

inline quantile_summary summarize(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("summarize: no values");
    std::sort(values.begin(), values.end());
    const auto at = [&](double p) {
        const double pos = p * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const auto hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return values[lo] * (1.0 - frac) + values[hi] * frac;
    };
    return {at(0.25), at(0.5), at(0.75)};
}

struct trial_aggregate {
    quantile_summary marginal_coverage;
    quantile_summary mean_width;
    quantile_summary multivalidity_error;
    std::vector<std::string> group_names;
    std::vector<quantile_summary> group_coverage;
    std::vector<quantile_summary> group_width;
};

// Median and quartiles across independent trials, per metric.
inline trial_aggregate aggregate_trials(const std::vector<coverage_report>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_trials: no reports");
    trial_aggregate agg;
    std::vector<double> vals;
    vals.reserve(reports.size());
    const auto collect = [&](auto&& get) {
        vals.clear();
        for (const auto& r : reports) vals.push_back(get(r));
        return summarize(vals);
    };
    agg.marginal_coverage = collect([](const coverage_report& r) { return r.marginal_coverage; });
    agg.mean_width = collect([](const coverage_report& r) { return r.mean_width; });
    agg.multivalidity_error =
        collect([](const coverage_report& r) { return r.multivalidity_error; });
    const std::size_t n_groups = reports.front().groups.size();
    for (std::size_t g = 0; g < n_groups; ++g) {
        agg.group_names.push_back(reports.front().groups[g].name);
        agg.group_coverage.push_back(
            collect([g](const coverage_report& r) { return r.groups.at(g).coverage; }));
        agg.group_width.push_back(
            collect([g](const coverage_report& r) { return r.groups.at(g).mean_width; }));
    }
    return agg;
}

// One row per (group, bucket) cell, then per-group rows, then the marginal row.
inline void write_report_csv(std::ostream& out, const coverage_report& rep,
                             const std::vector<std::string>& comments = {}) {
    for (const auto& c : comments)
        out << (c.empty() || c[0] == '#' ? "" : "# ") << c << "\n";
    out << "row,group,name,bucket,n,coverage,v,mv_error,alpha_ref,mean_width,unbounded\n";
    const auto d = [](double v) { return csv::format_double(v); };
    for (const auto& c : rep.cells) {
        out << "cell," << c.group << "," << rep.groups[static_cast<std::size_t>(c.group)].name
            << "," << c.bucket << "," << c.n << "," << d(c.coverage) << "," << d(c.v) << ","
            << d(c.mv_error) << "," << d(c.alpha_ref) << ",,\n";
    }
    for (const auto& g : rep.groups) {
        out << "group," << g.group << "," << g.name << ",," << g.n << ","
            << d(g.coverage) << ",,,," << d(g.mean_width) << "," << g.unbounded << "\n";
    }
    out << "marginal,,,," << rep.rounds << "," << d(rep.marginal_coverage) << ",,"
        << d(rep.multivalidity_error) << ",," << d(rep.mean_width) << ","
        << rep.unbounded_rounds << "\n";
}

inline void print_report_table(std::ostream& out, const coverage_report& rep) {
    out << std::left << std::setw(14) << "group" << std::right << std::setw(10) << "n"
        << std::setw(12) << "coverage" << std::setw(12) << "width" << std::setw(11)
        << "unbounded" << "\n";
    const auto line = [&](const std::string& name, std::int64_t n, double cov,
                          double width, std::int64_t unb) {
        out << std::left << std::setw(14) << name << std::right << std::setw(10) << n
            << std::setw(12) << std::fixed << std::setprecision(4) << cov
            << std::setw(12) << std::setprecision(4) << width << std::setw(11) << unb
            << "\n";
        out.unsetf(std::ios::fixed);
    };
    for (const auto& g : rep.groups)
        line(g.name, g.n, g.coverage, g.mean_width, g.unbounded);
    line("(marginal)", rep.rounds, rep.marginal_coverage, rep.mean_width,
         rep.unbounded_rounds);
    out << "multivalidity error: " << rep.multivalidity_error << "\n";
}

}  // namespace mvp
