#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pbope/domain.hpp"
#include "pbope/util.hpp"

namespace pbope {

// Policy constructors. All policies are deterministic; "random-looking"
// behaviour comes from pinned hashes of (salt, user, query, item).

// Scores from an explicit (context, item) -> score table. Missing pairs are
// unscorable and surface as an error when the policy is applied.
inline RankingPolicy score_table_policy(
    std::map<std::pair<std::string, std::string>, double> scores, std::string name = "score_table") {
    auto table = std::make_shared<std::map<std::pair<std::string, std::string>, double>>(std::move(scores));
    RankingPolicy p;
    p.name = std::move(name);
    p.scorer = [table](const ContextId& ctx, const std::vector<ItemId>& items) {
        std::vector<double> out;
        out.reserve(items.size());
        for (const auto& item : items) {
            auto it = table->find(std::make_pair(ctx.key(), item));
            out.push_back(it == table->end() ? std::nan("") : it->second);
        }
        return out;
    };
    return p;
}

// Pseudo-random but deterministic scores from a pinned hash.
inline RankingPolicy hash_policy(std::uint64_t salt) {
    RankingPolicy p;
    p.name = "hash(" + std::to_string(salt) + ")";
    p.scorer = [salt](const ContextId& ctx, const std::vector<ItemId>& items) {
        std::vector<double> out;
        out.reserve(items.size());
        for (const auto& item : items)
            out.push_back(hash_unit({ctx.user, ctx.query.value_or(""), item}, salt));
        return out;
    };
    return p;
}

// Ranks by true relevance; the best policy the simulator admits.
inline RankingPolicy oracle_policy(RelevanceTable relevance) {
    auto rel = std::make_shared<RelevanceTable>(std::move(relevance));
    RankingPolicy p;
    p.name = "oracle";
    p.scorer = [rel](const ContextId& ctx, const std::vector<ItemId>& items) {
        std::vector<double> out;
        out.reserve(items.size());
        for (const auto& item : items) out.push_back(rel->get(ctx, item));
        return out;
    };
    return p;
}

// Relevance plus hash noise: an imperfect ranker whose mistakes are stable.
inline RankingPolicy noisy_oracle_policy(RelevanceTable relevance, double noise,
                                         std::uint64_t salt) {
    auto rel = std::make_shared<RelevanceTable>(std::move(relevance));
    RankingPolicy p;
    p.name = "noisy_oracle(noise=" + std::to_string(noise) + ")";
    p.scorer = [rel, noise, salt](const ContextId& ctx, const std::vector<ItemId>& items) {
        std::vector<double> out;
        out.reserve(items.size());
        for (const auto& item : items)
            out.push_back(rel->get(ctx, item) +
                          noise * hash_unit({ctx.user, ctx.query.value_or(""), item}, salt));
        return out;
    };
    return p;
}

// Base ranking with the top two positions exchanged.
inline RankingPolicy swap_top_two_policy(RankingPolicy base) {
    auto b = std::make_shared<RankingPolicy>(std::move(base));
    RankingPolicy p;
    p.name = "swap_top_two(" + b->name + ")";
    p.scorer = [b](const ContextId& ctx, const std::vector<ItemId>& items) {
        auto order = rank_order(*b, ctx, items);
        std::vector<double> scores(items.size());
        for (std::size_t r = 0; r < order.size(); ++r)
            scores[order[r]] = static_cast<double>(order.size() - r);
        if (order.size() >= 2) std::swap(scores[order[0]], scores[order[1]]);
        return scores;
    };
    return p;
}

// Base ranking reversed.
inline RankingPolicy reverse_policy(RankingPolicy base) {
    auto b = std::make_shared<RankingPolicy>(std::move(base));
    RankingPolicy p;
    p.name = "reverse(" + b->name + ")";
    p.scorer = [b](const ContextId& ctx, const std::vector<ItemId>& items) {
        auto order = rank_order(*b, ctx, items);
        std::vector<double> scores(items.size());
        for (std::size_t r = 0; r < order.size(); ++r)
            scores[order[r]] = static_cast<double>(r + 1);
        return scores;
    };
    return p;
}

// Base ranking perturbed by hash noise on top of integer rank scores.
// strength ~ 1 shuffles neighbours, larger values shuffle further.
inline RankingPolicy jitter_policy(RankingPolicy base, std::uint64_t salt, double strength) {
    auto b = std::make_shared<RankingPolicy>(std::move(base));
    RankingPolicy p;
    p.name = "jitter(" + b->name + ", salt=" + std::to_string(salt) + ")";
    p.scorer = [b, salt, strength](const ContextId& ctx, const std::vector<ItemId>& items) {
        auto order = rank_order(*b, ctx, items);
        std::vector<double> scores(items.size());
        for (std::size_t r = 0; r < order.size(); ++r) {
            scores[order[r]] = static_cast<double>(order.size() - r) +
                               strength * hash_unit({ctx.user, ctx.query.value_or(""), items[order[r]]}, salt);
        }
        return scores;
    };
    return p;
}

// Builds a policy from its JSON descriptor:
//   {"kind":"hash","salt":7}
//   {"kind":"oracle"} / {"kind":"noisy_oracle","noise":0.5,"salt":3}
//   {"kind":"swap_top_two","base":{...}} / {"kind":"reverse","base":{...}}
//   {"kind":"jitter","base":{...},"salt":101,"strength":2.5}
//   {"kind":"score_table","entries":[{"user_id":..,"query":..,"item":..,"score":..}]}
// Oracle kinds need the simulator's relevance table.
inline RankingPolicy policy_from_json(const nlohmann::json& j, const RelevanceTable* relevance) {
    if (!j.is_object() || !j.contains("kind"))
        throw DataError("policy descriptor must be an object with a 'kind' field");
    const std::string kind = j.at("kind").get<std::string>();
    auto need_relevance = [&]() -> const RelevanceTable& {
        if (!relevance)
            throw DataError("policy kind '" + kind + "' needs a relevance table (simulator context)");
        return *relevance;
    };
    auto base = [&]() {
        if (!j.contains("base")) throw DataError("policy kind '" + kind + "' needs a 'base' policy");
        return policy_from_json(j.at("base"), relevance);
    };
    if (kind == "hash") return hash_policy(j.value("salt", std::uint64_t{0}));
    if (kind == "oracle") return oracle_policy(need_relevance());
    if (kind == "noisy_oracle")
        return noisy_oracle_policy(need_relevance(), j.value("noise", 0.5),
                                   j.value("salt", std::uint64_t{0}));
    if (kind == "swap_top_two") return swap_top_two_policy(base());
    if (kind == "reverse") return reverse_policy(base());
    if (kind == "jitter")
        return jitter_policy(base(), j.value("salt", std::uint64_t{0}), j.value("strength", 2.5));
    if (kind == "score_table") {
        std::map<std::pair<std::string, std::string>, double> table;
        for (const auto& e : j.value("entries", nlohmann::json::array())) {
            ContextId ctx{e.at("user_id").get<std::string>(), std::nullopt};
            if (e.contains("query") && !e.at("query").is_null())
                ctx.query = e.at("query").get<std::string>();
            table[std::make_pair(ctx.key(), e.at("item").get<std::string>())] =
                e.at("score").get<double>();
        }
        return score_table_policy(std::move(table));
    }
    throw DataError("unknown policy kind '" + kind + "'");
}

}  // namespace pbope
