#pragma once

// Shared builders and independent oracle routines for the test suites. The
// oracles deliberately take their own route (linear scans, counting medians)
// so they stay independent of the library implementations they check.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pbope/pbope.hpp"

namespace testutil {

struct Imp {
    std::string item;
    bool clicked;
};

inline pbope::Session make_session(std::string id, std::vector<Imp> imps, int views = -1,
                                   std::string user = "u1",
                                   std::optional<std::string> query = std::nullopt, int day = 0) {
    pbope::Session s;
    s.session_id = std::move(id);
    s.day = day;
    s.context = pbope::ContextId{std::move(user), std::move(query)};
    int pos = 1;
    int max_clicked = 0;
    for (auto& i : imps) {
        if (i.clicked) max_clicked = pos;
        s.impressions.push_back(pbope::Impression{std::move(i.item), pos, i.clicked});
        ++pos;
    }
    s.views = views >= 0 ? views : static_cast<int>(s.impressions.size());
    if (s.views < max_clicked) s.views = max_clicked;
    return s;
}

// Random valid sessions: contiguous positions, unique items, views >= K.
inline std::vector<pbope::Session> random_log(std::mt19937& rng, int n_sessions, int max_len,
                                              double click_prob = 0.35, bool with_query = false) {
    std::uniform_int_distribution<int> len_dist(1, max_len);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<pbope::Session> log;
    for (int i = 0; i < n_sessions; ++i) {
        const int len = len_dist(rng);
        std::vector<Imp> imps;
        for (int k = 0; k < len; ++k)
            imps.push_back(Imp{"it" + std::to_string(i) + "_" + std::to_string(k),
                               unit(rng) < click_prob});
        auto q = with_query ? std::optional<std::string>("q" + std::to_string(i % 5)) : std::nullopt;
        log.push_back(make_session("s" + std::to_string(i), std::move(imps), -1,
                                   "u" + std::to_string(i % 7), q));
    }
    return log;
}

inline pbope::PositionAssignment identity_assignment(const std::vector<pbope::Session>& sessions) {
    pbope::PositionAssignment asg;
    for (const auto& s : sessions) {
        for (const auto& imp : s.impressions) {
            asg.set(s.session_id, imp.item, imp.position);
            ++asg.assigned;
            ++asg.total;
        }
    }
    return asg;
}

// Plain truncated reward mean, computed by direct linear scan: for each
// session, sum alpha(k) over clicked positions k <= K; average over sessions
// that showed at least one item.
inline double truncated_reward_mean(const std::vector<pbope::Session>& sessions,
                                    pbope::RewardSpec reward) {
    double total = 0.0;
    long long n = 0;
    for (const auto& s : sessions) {
        if (s.impressions.empty()) continue;
        ++n;
        int k_max = 0;
        for (const auto& imp : s.impressions)
            if (imp.clicked && imp.position > k_max) k_max = imp.position;
        for (const auto& imp : s.impressions)
            if (imp.clicked && imp.position <= k_max) total += pbope::alpha_weight(reward, imp.position);
    }
    return total / static_cast<double>(n);
}

// Counting-based lower median, independent of the sort-based routine: the
// smallest value whose cumulative count reaches half the multiset.
inline int counting_lower_median(const std::vector<int>& values) {
    const std::size_t need = (values.size() + 1) / 2;
    std::vector<int> unique_sorted = values;
    std::sort(unique_sorted.begin(), unique_sorted.end());
    unique_sorted.erase(std::unique(unique_sorted.begin(), unique_sorted.end()),
                        unique_sorted.end());
    for (int v : unique_sorted) {
        std::size_t count_le = 0;
        for (int x : values)
            if (x <= v) ++count_le;
        if (count_le >= need) return v;
    }
    return unique_sorted.back();
}

// Small synthetic population with an explicit relevance table.
inline pbope::SimConfig small_sim_config(int num_contexts, int num_items, int list_length,
                                         std::vector<double> theta, std::uint64_t seed,
                                         double gamma_lo = 0.1, double gamma_hi = 0.9,
                                         bool with_query = false) {
    pbope::SimConfig cfg;
    cfg.surface = with_query ? pbope::Surface::TextSearch : pbope::Surface::Moo;
    cfg.items = pbope::make_default_items(num_items);
    cfg.list_length = list_length;
    cfg.theta_true = pbope::PositionBiasCurve(std::move(theta));
    cfg.seed = seed;
    for (int i = 0; i < num_contexts; ++i) {
        pbope::ContextId ctx{"u" + std::to_string(i), std::nullopt};
        if (with_query) ctx.query = "q" + std::to_string(i % 4);
        cfg.contexts.push_back(ctx);
    }
    pbope::RelevanceTable rel;
    for (const auto& ctx : cfg.contexts) {
        for (const auto& item : cfg.items) {
            double g = gamma_lo + (gamma_hi - gamma_lo) *
                                      pbope::hash_unit({ctx.key(), item}, seed ^ 0xABCDEF);
            rel.set(ctx, item, g);
        }
    }
    cfg.relevance = rel;
    return cfg;
}

}  // namespace testutil
