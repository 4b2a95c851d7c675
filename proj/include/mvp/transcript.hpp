#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "mvp/csv.hpp"

namespace mvp {

// One interaction round: which groups the point belonged to, the threshold
// played (a grid point for MVP, an arbitrary real for baselines), the realized
// score and the coverage outcome.
struct round_record {
    std::int64_t t = 0;
    std::uint64_t group_mask = 0;
    double q = 0.0;
    int bucket = 0;  // 1-based
    double score = 0.0;
    bool covered = false;
};

class transcript {
public:
    void append(round_record r) {
        r.t = static_cast<std::int64_t>(rows_.size()) + 1;
        rows_.push_back(r);
    }

    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }
    const round_record& operator[](std::size_t i) const { return rows_[i]; }
    auto begin() const { return rows_.begin(); }
    auto end() const { return rows_.end(); }

    // Column order is fixed; header row mandatory. Optional comment lines
    // (config provenance) go first.
    void write_csv(std::ostream& out,
                   const std::vector<std::string>& comments = {}) const {
        for (const auto& c : comments)
            out << (c.empty() || c[0] == '#' ? "" : "# ") << c << "\n";
        out << "t,q,bucket,score,covered,group_mask\n";
        char mask[20];
        for (const auto& r : rows_) {
            std::snprintf(mask, sizeof(mask), "%llx",
                          static_cast<unsigned long long>(r.group_mask));
            out << r.t << ',' << csv::format_double(r.q) << ',' << r.bucket << ','
                << csv::format_double(r.score) << ',' << (r.covered ? 1 : 0) << ','
                << mask << "\n";
        }
    }

    std::string to_csv_string(const std::vector<std::string>& comments = {}) const {
        std::ostringstream ss;
        write_csv(ss, comments);
        return ss.str();
    }

    static transcript read_csv(std::istream& in) {
        const auto t = csv::read_table(in, "transcript");
        const auto ct = t.column("t"), cq = t.column("q"), cb = t.column("bucket");
        const auto cs = t.column("score"), cc = t.column("covered"),
                   cm = t.column("group_mask");
        transcript out;
        std::size_t line = 1;
        for (const auto& row : t.rows) {
            ++line;
            round_record r;
            r.t = csv::parse_int(row[ct], line);
            r.q = csv::parse_double(row[cq], line);
            r.bucket = static_cast<int>(csv::parse_int(row[cb], line));
            r.score = csv::parse_double(row[cs], line);
            r.covered = csv::parse_int(row[cc], line) != 0;
            r.group_mask = std::stoull(row[cm], nullptr, 16);
            out.rows_.push_back(r);
        }
        return out;
    }

private:
    std::vector<round_record> rows_;
};

}  // namespace mvp
