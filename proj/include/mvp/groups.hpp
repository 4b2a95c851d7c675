#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mvp {

// Named, possibly intersecting subsets of the feature space. Membership masks
// are 64-bit, which caps a system at 64 groups (the experiments use at most
// 20). Predicates must be deterministic and total.
class group_system {
public:
    using predicate = std::function<bool(std::span<const double>)>;

    group_system() = default;

    void add(std::string name, predicate pred) {
        if (groups_.size() >= 64)
            throw std::invalid_argument("group_system: at most 64 groups supported");
        groups_.emplace_back(std::move(name), std::move(pred));
    }

    // the trivial system containing every point
    static group_system everything(std::string name = "all") {
        group_system g;
        g.add(std::move(name), [](std::span<const double>) { return true; });
        return g;
    }

    std::size_t size() const { return groups_.size(); }

    const std::string& name(std::size_t g) const { return groups_.at(g).first; }

    bool contains(std::size_t g, std::span<const double> x) const {
        return groups_.at(g).second(x);
    }

    std::uint64_t active_mask(std::span<const double> x) const {
        std::uint64_t mask = 0;
        for (std::size_t g = 0; g < groups_.size(); ++g)
            if (groups_[g].second(x)) mask |= (std::uint64_t{1} << g);
        return mask;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(groups_.size());
        for (const auto& [n, p] : groups_) out.push_back(n);
        return out;
    }

private:
    std::vector<std::pair<std::string, predicate>> groups_;
};

}  // namespace mvp
