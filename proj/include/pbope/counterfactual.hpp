#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbope/domain.hpp"
#include "pbope/util.hpp"

namespace pbope {

// Counterfactual position of each logged impression under the evaluated
// policy, produced either by rescoring the logged list (moo surface) or by
// joining control against treatment on (query, item) and taking the median
// treatment position (text-search surface).

struct PositionAssignment {
    std::unordered_map<std::string, int> positions;  // key(session_id, item) -> p
    std::size_t assigned = 0;
    std::size_t total = 0;  // impressions considered
    std::optional<std::string> warning;

    static std::string key(const std::string& session_id, const ItemId& item) {
        std::string k = session_id;
        k.push_back('\x1f');
        k += item;
        return k;
    }

    void set(const std::string& session_id, const ItemId& item, int p) {
        positions[key(session_id, item)] = p;
    }

    std::optional<int> lookup(const std::string& session_id, const ItemId& item) const {
        auto it = positions.find(key(session_id, item));
        if (it == positions.end()) return std::nullopt;
        return it->second;
    }

    double coverage() const {
        return total == 0 ? 0.0 : static_cast<double>(assigned) / static_cast<double>(total);
    }
};

// Lower median: an actually-occurring integer position, so the result
// always has a curve entry (a fractional midpoint would not).
inline int lower_median(std::vector<int> values) {
    if (values.empty()) throw DataError("lower_median of an empty multiset");
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

// Ranks the logged impression list under the policy; p = 1-based rank.
// The candidate set is exactly the logged list: the counterfactual policy
// reorders what was shown, it does not introduce unlogged items.
inline PositionAssignment rescore_positions(const Session& session, const RankingPolicy& policy) {
    std::vector<ItemId> items;
    items.reserve(session.impressions.size());
    for (const auto& imp : session.impressions) items.push_back(imp.item);
    PositionAssignment out;
    out.total = items.size();
    auto order = rank_order(policy, session.context, items);
    for (std::size_t r = 0; r < order.size(); ++r)
        out.set(session.session_id, items[order[r]], static_cast<int>(r + 1));
    out.assigned = items.size();
    return out;
}

inline PositionAssignment rescore_log(const std::vector<Session>& sessions,
                                      const RankingPolicy& policy) {
    PositionAssignment out;
    for (const auto& s : sessions) {
        PositionAssignment one = rescore_positions(s, policy);
        out.total += one.total;
        out.assigned += one.assigned;
        for (auto& [k, p] : one.positions) out.positions.emplace(std::move(k), p);
    }
    return out;
}

// Joins control impressions against treatment on (query, item); p is the
// lower median of all positions at which treatment displayed the item for
// that query. Pairs absent from treatment stay unassigned (coverage < 1);
// the estimator drops affected sessions and reports them.
inline PositionAssignment join_positions(const std::vector<Session>& control,
                                         const std::vector<Session>& treatment) {
    auto pair_key = [](const std::string& query, const ItemId& item) {
        std::string k = query;
        k.push_back('\x1f');
        k += item;
        return k;
    };
    std::unordered_map<std::string, std::vector<int>> treatment_positions;
    for (const auto& s : treatment) {
        if (!s.context.query) throw DataError("join_positions: treatment log has no query fields");
        for (const auto& imp : s.impressions)
            treatment_positions[pair_key(*s.context.query, imp.item)].push_back(imp.position);
    }
    std::unordered_map<std::string, int> median_cache;
    median_cache.reserve(treatment_positions.size());
    for (auto& [k, v] : treatment_positions) median_cache[k] = lower_median(v);

    PositionAssignment out;
    for (const auto& s : control) {
        if (!s.context.query) throw DataError("join_positions: control log has no query fields");
        for (const auto& imp : s.impressions) {
            ++out.total;
            auto it = median_cache.find(pair_key(*s.context.query, imp.item));
            if (it == median_cache.end()) continue;
            out.set(s.session_id, imp.item, it->second);
            ++out.assigned;
        }
    }
    if (out.assigned == 0)
        out.warning = "join produced an empty intersection: no (query, item) pair of the control "
                      "log appears in the treatment log";
    return out;
}

}  // namespace pbope
