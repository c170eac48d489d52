#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pbope/util.hpp"

namespace pbope {

// Opaque item identifier (a restaurant, a document, ...).
using ItemId = std::string;

enum class Surface { Moo, TextSearch };

inline const char* surface_name(Surface s) {
    return s == Surface::Moo ? "moo" : "text_search";
}

// Context of one logged list: the user, plus the query on search surfaces.
struct ContextId {
    std::string user;
    std::optional<std::string> query;

    bool operator==(const ContextId& o) const { return user == o.user && query == o.query; }

    // Stable composite key for hashing and table lookups.
    std::string key() const {
        std::string k = user;
        if (query) {
            k.push_back('\x1f');
            k += *query;
        }
        return k;
    }
};

// One displayed item at a 1-based position with its click indicator.
struct Impression {
    ItemId item;
    int position = 0;
    bool clicked = false;

    bool operator==(const Impression& o) const {
        return item == o.item && position == o.position && clicked == o.clicked;
    }
};

// One logged ranking impression list; the atomic unit of evaluation.
// Invariants (checked by validate_session):
//   - impressions sorted strictly ascending by position, contiguous 1..L
//   - item ids unique within the list
//   - views >= max clicked position
struct Session {
    std::string session_id;
    int day = 0;
    ContextId context;
    std::vector<Impression> impressions;
    int views = 0;

    bool operator==(const Session& o) const {
        return session_id == o.session_id && day == o.day && context == o.context &&
               impressions == o.impressions && views == o.views;
    }
};

// Deepest clicked position K; absent when the session has no clicks.
inline std::optional<int> session_truncation(const Session& s) {
    std::optional<int> k;
    for (const auto& imp : s.impressions) {
        if (imp.clicked && (!k || imp.position > *k)) k = imp.position;
    }
    return k;
}

// Validates Session invariants; throws DataError naming the violated one.
inline void validate_session(const Session& s) {
    if (s.session_id.empty()) throw DataError("empty session_id");
    if (s.day < 0) throw DataError("negative day index");
    if (s.context.user.empty()) throw DataError("empty user_id");
    if (s.views < 0) throw DataError("negative views");
    int expected = 1;
    std::vector<const std::string*> items;
    items.reserve(s.impressions.size());
    for (const auto& imp : s.impressions) {
        if (imp.item.empty()) throw DataError("empty item id");
        if (imp.position < 1) throw DataError("position < 1");
        if (imp.position < expected)
            throw DataError("duplicate position " + std::to_string(imp.position));
        if (imp.position > expected)
            throw DataError("positions not contiguous: expected " + std::to_string(expected) +
                            ", got " + std::to_string(imp.position));
        ++expected;
        items.push_back(&imp.item);
    }
    std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return *a < *b; });
    for (std::size_t i = 1; i < items.size(); ++i) {
        if (*items[i] == *items[i - 1]) throw DataError("duplicate item id '" + *items[i] + "'");
    }
    if (auto k = session_truncation(s); k && s.views < *k) {
        throw DataError("views (" + std::to_string(s.views) + ") < max clicked position (" +
                        std::to_string(*k) + ")");
    }
}

// ---------------------------------------------------------------------------
// Reward weighting
// ---------------------------------------------------------------------------

enum class RewardKind { Clicks, Dcg, Precision };

struct RewardSpec {
    RewardKind kind = RewardKind::Clicks;
};

inline const char* reward_name(RewardKind k) {
    switch (k) {
        case RewardKind::Clicks: return "clicks";
        case RewardKind::Dcg: return "dcg";
        case RewardKind::Precision: return "precision";
    }
    return "clicks";
}

inline RewardKind reward_from_name(const std::string& name) {
    if (name == "clicks") return RewardKind::Clicks;
    if (name == "dcg") return RewardKind::Dcg;
    if (name == "precision") return RewardKind::Precision;
    throw DataError("unknown reward kind '" + name + "' (expected clicks|dcg|precision)");
}

// Position weight alpha(k): Clicks -> 1, Dcg -> 1/log2(k+1), Precision -> 1/k.
// Strictly positive and non-increasing in k for every kind.
inline double alpha_weight(RewardSpec spec, int k) {
    switch (spec.kind) {
        case RewardKind::Clicks: return 1.0;
        case RewardKind::Dcg: return 1.0 / std::log2(static_cast<double>(k) + 1.0);
        case RewardKind::Precision: return 1.0 / static_cast<double>(k);
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Position-bias curve
// ---------------------------------------------------------------------------

// Examination probabilities by display position, 1-based. Values live in
// (0, 1]. Fitted curves follow the theta[1] = 1 convention; the estimator
// consumes only ratios, so globally scaled curves are equally valid inputs.
class PositionBiasCurve {
public:
    PositionBiasCurve() = default;

    explicit PositionBiasCurve(std::vector<double> theta) : theta_(std::move(theta)) {
        if (theta_.empty()) throw DataError("position-bias curve is empty");
        for (std::size_t i = 0; i < theta_.size(); ++i) {
            double v = theta_[i];
            if (!std::isfinite(v) || v <= 0.0 || v > 1.0)
                throw DataError("position-bias curve entry at position " + std::to_string(i + 1) +
                                " out of (0, 1]: " + std::to_string(v));
        }
    }

    int max_position() const { return static_cast<int>(theta_.size()); }

    // Strict lookup for logged positions 1..P_max.
    double at(int position) const {
        if (position < 1 || position > max_position())
            throw DataError("position " + std::to_string(position) +
                            " outside position-bias curve (1.." + std::to_string(max_position()) + ")");
        return theta_[static_cast<std::size_t>(position - 1)];
    }

    // Clamp-to-last lookup for counterfactual positions beyond P_max.
    double at_clamped(int position) const {
        if (position < 1) throw DataError("position < 1 in curve lookup");
        if (position > max_position()) return theta_.back();
        return theta_[static_cast<std::size_t>(position - 1)];
    }

    const std::vector<double>& values() const { return theta_; }

    bool operator==(const PositionBiasCurve& o) const { return theta_ == o.theta_; }

private:
    std::vector<double> theta_;
};

// ---------------------------------------------------------------------------
// Relevance table
// ---------------------------------------------------------------------------

// Association from (context, item) to a relevance probability in [0, 1].
// Backed by explicit entries plus an optional procedural generator for large
// synthetic populations; lookups for absent pairs fall back to the generator,
// then to a configured default. A multiplicative scale supports day-drift
// experiments; looked-up values are clamped to [0, 1].
class RelevanceTable {
public:
    using Generator = std::function<double(const ContextId&, const ItemId&)>;

    RelevanceTable() = default;
    explicit RelevanceTable(double default_gamma) : default_(default_gamma) {}

    void set(const ContextId& ctx, const ItemId& item, double gamma) {
        if (!(gamma >= 0.0 && gamma <= 1.0))
            throw DataError("relevance value out of [0, 1]: " + std::to_string(gamma));
        entries_[std::make_pair(ctx.key(), item)] = gamma;
    }

    void set_default(double gamma) { default_ = gamma; }
    double default_gamma() const { return default_; }

    void set_generator(Generator g) { generator_ = std::move(g); }
    bool has_generator() const { return static_cast<bool>(generator_); }

    double get(const ContextId& ctx, const ItemId& item) const {
        double raw = default_;
        if (!entries_.empty()) {
            auto it = entries_.find(std::make_pair(ctx.key(), item));
            if (it != entries_.end()) raw = it->second;
            else if (generator_) raw = generator_(ctx, item);
        } else if (generator_) {
            raw = generator_(ctx, item);
        }
        return std::clamp(raw * scale_, 0.0, 1.0);
    }

    // Copy with all values multiplied by `factor` (clamped on lookup).
    RelevanceTable scaled(double factor) const {
        if (!(factor > 0.0)) throw DataError("relevance scale factor must be > 0");
        RelevanceTable t = *this;
        t.scale_ *= factor;
        return t;
    }

    double scale() const { return scale_; }

    // Explicit entries with the scale applied, in deterministic key order.
    const std::map<std::pair<std::string, std::string>, double>& raw_entries() const {
        return entries_;
    }

    std::size_t size() const { return entries_.size(); }

private:
    double default_ = 0.0;
    double scale_ = 1.0;
    Generator generator_;
    std::map<std::pair<std::string, std::string>, double> entries_;
};

// ---------------------------------------------------------------------------
// Ranking policy
// ---------------------------------------------------------------------------

// Deterministic scorer over a candidate set. For a fixed context and
// candidate set the induced ranking is a strict total order: scores sorted
// descending, ties broken by ascending item id.
struct RankingPolicy {
    std::string name;
    std::function<std::vector<double>(const ContextId&, const std::vector<ItemId>&)> scorer;
};

// Candidate indices in ranked order. Throws DataError naming the first item
// with a non-finite score (policies must be total over their candidates).
inline std::vector<std::size_t> rank_order(const RankingPolicy& policy, const ContextId& ctx,
                                           const std::vector<ItemId>& items) {
    std::vector<double> scores = policy.scorer(ctx, items);
    if (scores.size() != items.size())
        throw DataError("policy '" + policy.name + "' returned " + std::to_string(scores.size()) +
                        " scores for " + std::to_string(items.size()) + " items");
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!std::isfinite(scores[i]))
            throw DataError("policy '" + policy.name + "' cannot score item '" + items[i] + "'");
    }
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return items[a] < items[b];
    });
    return order;
}

inline std::vector<ItemId> ranked_items(const RankingPolicy& policy, const ContextId& ctx,
                                        const std::vector<ItemId>& items) {
    auto order = rank_order(policy, ctx, items);
    std::vector<ItemId> out;
    out.reserve(items.size());
    for (std::size_t idx : order) out.push_back(items[idx]);
    return out;
}

// ---------------------------------------------------------------------------
// Estimate container
// ---------------------------------------------------------------------------

// Result of one off-policy estimate. `n` is the denominator actually used
// (sessions or impression appearances, depending on the estimator config).
struct OpeResult {
    double value = 0.0;
    long long n = 0;
    double std_error = 0.0;
    double effective_sample_size = 0.0;
    long long clipped_terms = 0;
};

}  // namespace pbope
