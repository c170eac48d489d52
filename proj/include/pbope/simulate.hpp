#pragma once

#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbope/domain.hpp"
#include "pbope/json_io.hpp"
#include "pbope/util.hpp"

namespace pbope {

// Ground-truth examination-model simulator. A session is generated by
// ranking the context's candidate set with the logging policy and drawing
// each position's click independently with probability
// theta_true[k] * gamma(context, item). It doubles as the oracle for
// estimator validation: the same parameters give exact expected values.

inline constexpr const char* kSimRngName = "mt19937_64/per-session-splitmix64";

struct SimConfig {
    std::vector<ItemId> items;          // candidate pool shared by all contexts
    int list_length = 5;                // L, positions rendered per session
    PositionBiasCurve theta_true;
    RelevanceTable relevance;
    std::vector<ContextId> contexts;
    std::vector<double> context_weights;  // empty = uniform
    int sessions_per_day = 1000;
    int days = 1;
    int first_day = 0;                  // day label / stream offset of day 0
    std::uint64_t seed = 1;
    Surface surface = Surface::Moo;
};

inline std::vector<ItemId> make_default_items(int n, const std::string& prefix = "item_") {
    std::vector<ItemId> items;
    items.reserve(static_cast<std::size_t>(n));
    char buf[32];
    for (int i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof(buf), "%s%04d", prefix.c_str(), i);
        items.emplace_back(buf);
    }
    return items;
}

inline void validate_sim_config(const SimConfig& c) {
    if (c.items.empty()) throw DataError("sim config: empty item pool");
    if (c.list_length < 1) throw DataError("sim config: list_length < 1");
    if (c.list_length > static_cast<int>(c.items.size()))
        throw DataError("sim config: list_length exceeds item pool size");
    if (c.theta_true.max_position() < c.list_length)
        throw DataError("sim config: theta_true shorter than list_length");
    if (c.contexts.empty()) throw DataError("sim config: no contexts");
    if (c.sessions_per_day <= 0) throw DataError("sim config: sessions_per_day must be > 0");
    if (c.days <= 0) throw DataError("sim config: days must be > 0");
    if (!c.context_weights.empty()) {
        if (c.context_weights.size() != c.contexts.size())
            throw DataError("sim config: context_weights size mismatch");
        double total = 0.0;
        for (double w : c.context_weights) {
            if (!(w >= 0.0)) throw DataError("sim config: negative context weight");
            total += w;
        }
        if (!(total > 0.0)) throw DataError("sim config: context weights sum to zero");
    }
    for (const auto& ctx : c.contexts) {
        const bool has_query = ctx.query.has_value();
        if ((c.surface == Surface::TextSearch) != has_query)
            throw DataError("sim config: context query presence does not match surface");
    }
}

namespace detail {

inline double next_unit(std::mt19937_64& rng) { return to_unit(rng()); }

inline std::size_t pick_context(const SimConfig& c, std::mt19937_64& rng) {
    double u = next_unit(rng);
    if (c.context_weights.empty()) {
        auto idx = static_cast<std::size_t>(u * static_cast<double>(c.contexts.size()));
        return idx < c.contexts.size() ? idx : c.contexts.size() - 1;
    }
    double total = 0.0;
    for (double w : c.context_weights) total += w;
    double cut = u * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < c.context_weights.size(); ++i) {
        acc += c.context_weights[i];
        if (cut < acc) return i;
    }
    return c.contexts.size() - 1;
}

// Core draw for a context already known to be in the config.
inline Session simulate_session_unchecked(const RankingPolicy& policy, const ContextId& context,
                                          const SimConfig& config, std::mt19937_64& rng, int day,
                                          std::string session_id) {
    Session s;
    s.session_id = std::move(session_id);
    s.day = day;
    s.context = context;
    s.views = config.list_length;
    auto order = rank_order(policy, context, config.items);
    s.impressions.reserve(static_cast<std::size_t>(config.list_length));
    for (int k = 1; k <= config.list_length; ++k) {
        const ItemId& item = config.items[order[static_cast<std::size_t>(k - 1)]];
        double p = config.theta_true.at(k) * config.relevance.get(context, item);
        bool clicked = next_unit(rng) < p;
        s.impressions.push_back(Impression{item, k, clicked});
    }
    return s;
}

}  // namespace detail

// Simulates one session. The policy ranks the candidate pool, the top L
// items are rendered, and clicks are drawn independently per position.
// views = L (every rendered position counts as viewed).
inline Session simulate_session(const RankingPolicy& policy, const ContextId& context,
                                const SimConfig& config, std::mt19937_64& rng, int day = 0,
                                std::string session_id = "s0") {
    bool known = false;
    for (const auto& c : config.contexts) {
        if (c == context) {
            known = true;
            break;
        }
    }
    if (!known)
        throw std::invalid_argument("simulate_session: context '" + context.key() +
                                    "' not in sim config");
    return detail::simulate_session_unchecked(policy, context, config, rng, day,
                                              std::move(session_id));
}

// Simulates sessions_per_day x days sessions. A pure function of
// (policy, config): each session draws from its own RNG stream derived from
// (seed, day, index), so results are identical under any worker count.
inline std::vector<Session> simulate_log(const RankingPolicy& policy, const SimConfig& config) {
    validate_sim_config(config);
    const std::size_t per_day = static_cast<std::size_t>(config.sessions_per_day);
    const std::size_t total = per_day * static_cast<std::size_t>(config.days);
    std::vector<Session> log(total);
    parallel_for(total, [&](std::size_t i) {
        const int local_day = static_cast<int>(i / per_day);
        const std::size_t idx = i % per_day;
        const int day = config.first_day + local_day;
        std::mt19937_64 rng(stream_seed(config.seed, static_cast<std::uint64_t>(day), idx));
        std::size_t ctx_idx = detail::pick_context(config, rng);
        char id[48];
        std::snprintf(id, sizeof(id), "d%d-s%06zu", day, idx);
        log[i] = detail::simulate_session_unchecked(policy, config.contexts[ctx_idx], config, rng,
                                                    day, id);
    });
    return log;
}

// Exact expected per-session reward of a policy under the generative model:
//   sum_k alpha(k) * theta_true[k] * gamma(context, item_at_k)
// averaged over contexts with their configured frequencies. No sampling.
inline double true_policy_value(const RankingPolicy& policy, const SimConfig& config,
                                RewardSpec reward = {}) {
    validate_sim_config(config);
    double total_weight = 0.0;
    KahanSum acc;
    for (std::size_t c = 0; c < config.contexts.size(); ++c) {
        const double w = config.context_weights.empty() ? 1.0 : config.context_weights[c];
        if (w <= 0.0) continue;
        const ContextId& ctx = config.contexts[c];
        auto order = rank_order(policy, ctx, config.items);
        double v = 0.0;
        for (int k = 1; k <= config.list_length; ++k) {
            const ItemId& item = config.items[order[static_cast<std::size_t>(k - 1)]];
            v += alpha_weight(reward, k) * config.theta_true.at(k) * config.relevance.get(ctx, item);
        }
        acc.add(w * v);
        total_weight += w;
    }
    return acc.value() / total_weight;
}

inline LogHeader sim_log_header(const SimConfig& config) {
    LogHeader h;
    h.surface = config.surface;
    h.rng_name = kSimRngName;
    h.seed = config.seed;
    return h;
}

// Sidecar with the ground truth (theta_true, gamma, seed) for oracle-based
// tests. Explicit relevance entries are dumped with the scale applied;
// generator-backed tables record the fact instead of the full population.
inline nlohmann::json sidecar_json(const SimConfig& config) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["surface"] = surface_name(config.surface);
    j["rng"] = kSimRngName;
    j["seed"] = config.seed;
    j["list_length"] = config.list_length;
    j["theta"] = config.theta_true.values();
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [key, raw] : config.relevance.raw_entries()) {
        const auto sep = key.first.find('\x1f');
        nlohmann::json e;
        e["user_id"] = key.first.substr(0, sep);
        if (sep != std::string::npos) e["query"] = key.first.substr(sep + 1);
        e["item"] = key.second;
        double v = raw * config.relevance.scale();
        e["gamma"] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        entries.push_back(std::move(e));
    }
    j["gamma"] = std::move(entries);
    j["gamma_default"] = config.relevance.default_gamma();
    if (config.relevance.has_generator()) j["gamma_generator"] = true;
    return j;
}

inline void write_sidecar(const std::string& path, const SimConfig& config) {
    write_json_file(path, sidecar_json(config));
}

// Builds a SimConfig from its JSON descriptor. Contexts and relevance can be
// listed explicitly or generated procedurally:
//   {"surface":"moo","num_items":12,"list_length":8,"theta":[...],
//    "num_contexts":40,"sessions_per_day":1000,"days":1,"seed":7,
//    "relevance":{"kind":"hash","lo":0.05,"hi":0.6,"salt":11}}
//   explicit forms: "items":[...], "contexts":[{"user_id":..,"query":..}],
//    "relevance":{"entries":[{"user_id":..,"query":..,"item":..,"gamma":..}],
//                 "default":0.0}
inline SimConfig sim_config_from_json(const nlohmann::json& j) {
    SimConfig cfg;
    const std::string surface = j.value("surface", "moo");
    if (surface == "moo") cfg.surface = Surface::Moo;
    else if (surface == "text_search" || surface == "text-search") cfg.surface = Surface::TextSearch;
    else throw DataError("sim config: unknown surface '" + surface + "'");

    if (auto it = j.find("items"); it != j.end()) cfg.items = it->get<std::vector<std::string>>();
    else cfg.items = make_default_items(j.value("num_items", 10));
    cfg.list_length = j.value("list_length", 5);
    if (auto it = j.find("theta"); it != j.end())
        cfg.theta_true = PositionBiasCurve(it->get<std::vector<double>>());
    else
        throw DataError("sim config: missing 'theta'");

    if (auto it = j.find("contexts"); it != j.end()) {
        for (const auto& e : *it) {
            ContextId ctx{e.at("user_id").get<std::string>(), std::nullopt};
            if (e.contains("query") && !e.at("query").is_null())
                ctx.query = e.at("query").get<std::string>();
            cfg.contexts.push_back(std::move(ctx));
        }
    } else {
        const int n = j.value("num_contexts", 20);
        const int nq = j.value("num_queries", 8);
        char buf[32];
        for (int i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof(buf), "u%05d", i);
            ContextId ctx{buf, std::nullopt};
            if (cfg.surface == Surface::TextSearch) {
                char q[32];
                std::snprintf(q, sizeof(q), "q%03d", nq > 0 ? i % nq : 0);
                ctx.query = q;
            }
            cfg.contexts.push_back(std::move(ctx));
        }
    }
    if (auto it = j.find("context_weights"); it != j.end())
        cfg.context_weights = it->get<std::vector<double>>();

    if (auto it = j.find("relevance"); it != j.end()) {
        const auto& jr = *it;
        RelevanceTable rel(jr.value("default", 0.0));
        if (jr.value("kind", "") == "hash") {
            const double lo = jr.value("lo", 0.05);
            const double hi = jr.value("hi", 0.6);
            const auto salt = jr.value("salt", std::uint64_t{0});
            const bool by_query =
                jr.value("key", cfg.surface == Surface::TextSearch ? "query_item" : "context_item") ==
                std::string("query_item");
            rel.set_generator([lo, hi, salt, by_query](const ContextId& ctx, const ItemId& item) {
                const std::string& key = by_query && ctx.query ? *ctx.query : ctx.user;
                return lo + (hi - lo) * hash_unit({key, item}, salt);
            });
        }
        for (const auto& e : jr.value("entries", nlohmann::json::array())) {
            ContextId ctx{e.at("user_id").get<std::string>(), std::nullopt};
            if (e.contains("query") && !e.at("query").is_null())
                ctx.query = e.at("query").get<std::string>();
            rel.set(ctx, e.at("item").get<std::string>(), e.at("gamma").get<double>());
        }
        cfg.relevance = std::move(rel);
    }

    cfg.sessions_per_day = j.value("sessions_per_day", 1000);
    cfg.days = j.value("days", 1);
    cfg.first_day = j.value("first_day", 0);
    cfg.seed = j.value("seed", std::uint64_t{1});
    validate_sim_config(cfg);
    return cfg;
}

}  // namespace pbope
