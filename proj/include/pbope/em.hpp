#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbope/domain.hpp"
#include "pbope/util.hpp"

namespace pbope {

// Expectation maximization for the examination model: click = E and R with
// P(E=1) = theta_k depending only on position and P(R=1) = gamma depending
// only on the (context, item) pair.
//
// E-step posteriors for an impression at position k with pair relevance g:
//   clicked:     P(E=1) = 1,                       P(R=1) = 1
//   not clicked: P(E=1) = theta_k (1-g) / (1 - theta_k g)
//                P(R=1) = g (1-theta_k) / (1 - theta_k g)
// M-step: theta_k <- mean P(E=1) over impressions at position k,
//         gamma   <- mean P(R=1) over impressions of the pair.
//
// Pairs with fewer than min_pair_impressions impressions share one pooled
// background relevance parameter; the returned RelevanceTable carries it as
// its default, so sparse and unseen pairs resolve to the pooled estimate.
//
// The curve is normalized to theta[1] = 1 once after convergence (theta and
// gamma rescaled jointly; the estimator consumes only ratios).

struct EmConfig {
    int max_iterations = 500;
    double tolerance = 1e-6;       // max absolute parameter change
    double theta_floor = 1e-3;     // epsilon floor on fitted theta
    int min_pair_impressions = 10;
    int num_positions = 0;         // P_max; 0 = infer from the data
};

struct EmDiagnostics {
    std::vector<int> zero_impression_positions;  // set to theta_floor, never updated by EM
    long long loglik_clamped_terms = 0;
    int normalization_clamped = 0;  // fitted theta_k > theta_1, clamped to 1
    int floored_positions = 0;
    long long pooled_pairs = 0;
    long long estimated_pairs = 0;
    std::vector<double> loglik_trace;  // pre-update log-likelihood per iteration
};

struct EmFit {
    PositionBiasCurve theta;
    RelevanceTable gamma;
    int iterations_run = 0;
    double final_log_likelihood = 0.0;
    bool converged = false;
    EmDiagnostics diagnostics;
};

inline void validate_em_config(const EmConfig& c) {
    if (c.max_iterations < 1) throw DataError("em config: max_iterations must be >= 1");
    if (!(c.tolerance > 0.0)) throw DataError("em config: tolerance must be > 0");
    if (!(c.theta_floor > 0.0 && c.theta_floor < 1.0))
        throw DataError("em config: theta_floor must be in (0, 1)");
    if (c.min_pair_impressions < 0) throw DataError("em config: min_pair_impressions must be >= 0");
    if (c.num_positions < 0) throw DataError("em config: num_positions must be >= 0");
}

// Log-likelihood of sessions under (theta, gamma):
//   sum over impressions of [c log(theta_k g) + (1-c) log(1 - theta_k g)].
// Bernoulli probabilities are clamped away from {0, 1}; clamped_terms, when
// provided, counts how often that happened.
inline double log_likelihood(const std::vector<Session>& sessions, const PositionBiasCurve& theta,
                             const RelevanceTable& gamma, long long* clamped_terms = nullptr) {
    constexpr double kLo = 1e-12;
    constexpr double kHi = 1.0 - 1e-12;
    KahanSum ll;
    long long clamped = 0;
    for (const auto& s : sessions) {
        for (const auto& imp : s.impressions) {
            double p = theta.at(imp.position) * gamma.get(s.context, imp.item);
            if (p < kLo) {
                p = kLo;
                ++clamped;
            } else if (p > kHi) {
                p = kHi;
                ++clamped;
            }
            ll.add(imp.clicked ? std::log(p) : std::log1p(-p));
        }
    }
    if (clamped_terms) *clamped_terms = clamped;
    return ll.value();
}

namespace em_detail {

struct Group {
    std::uint32_t param = 0;
    std::uint16_t position = 0;  // 1-based
    std::uint64_t clicks = 0;
    std::uint64_t impressions = 0;
};

struct Dataset {
    int num_positions = 0;
    std::vector<Group> groups;                // sorted by (param, position)
    std::vector<std::uint64_t> param_clicks;  // per-parameter click totals
    std::vector<std::uint64_t> param_count;
    bool has_pooled = false;                  // parameter 0 is the pooled background
    std::vector<std::pair<ContextId, ItemId>> param_pair;  // identity of non-pooled params
    long long pooled_pairs = 0;
};

inline Dataset build_dataset(const std::vector<Session>& sessions, const EmConfig& config) {
    if (sessions.empty()) throw DataError("fit_position_bias: empty session list");

    std::unordered_map<std::string, std::uint32_t> ctx_ids;
    std::unordered_map<std::string, std::uint32_t> item_ids;
    std::vector<ContextId> ctx_of;
    std::vector<ItemId> item_of;

    struct Imp {
        std::uint64_t pair;
        std::uint32_t param = 0;
        std::uint16_t position;
        bool clicked;
    };
    std::vector<Imp> imps;
    std::size_t total = 0;
    for (const auto& s : sessions) total += s.impressions.size();
    imps.reserve(total);

    int max_pos = 0;
    for (const auto& s : sessions) {
        auto [cit, cnew] = ctx_ids.try_emplace(s.context.key(),
                                               static_cast<std::uint32_t>(ctx_of.size()));
        if (cnew) ctx_of.push_back(s.context);
        const std::uint32_t ci = cit->second;
        for (const auto& imp : s.impressions) {
            auto [iit, inew] = item_ids.try_emplace(imp.item,
                                                    static_cast<std::uint32_t>(item_of.size()));
            if (inew) item_of.push_back(imp.item);
            if (imp.position > 65535)
                throw DataError("fit_position_bias: position " + std::to_string(imp.position) +
                                " exceeds the supported range");
            if (imp.position > max_pos) max_pos = imp.position;
            imps.push_back(Imp{(static_cast<std::uint64_t>(ci) << 32) | iit->second, 0,
                               static_cast<std::uint16_t>(imp.position), imp.clicked});
        }
    }

    Dataset ds;
    ds.num_positions = config.num_positions > 0 ? config.num_positions : max_pos;
    if (max_pos > ds.num_positions)
        throw DataError("fit_position_bias: logged position " + std::to_string(max_pos) +
                        " exceeds num_positions " + std::to_string(ds.num_positions));

    // Assign parameters: walk pairs in sorted-key runs; sparse runs pool.
    std::vector<std::uint32_t> perm(imps.size());
    std::iota(perm.begin(), perm.end(), 0u);
    std::sort(perm.begin(), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
        return imps[a].pair < imps[b].pair;
    });
    const auto threshold = static_cast<std::size_t>(config.min_pair_impressions);
    // First sweep decides whether a pooled parameter exists at all.
    for (std::size_t i = 0; i < perm.size();) {
        std::size_t j = i;
        while (j < perm.size() && imps[perm[j]].pair == imps[perm[i]].pair) ++j;
        if (j - i < threshold) {
            ds.has_pooled = true;
            break;
        }
        i = j;
    }
    std::uint32_t next_param = ds.has_pooled ? 1u : 0u;
    for (std::size_t i = 0; i < perm.size();) {
        std::size_t j = i;
        while (j < perm.size() && imps[perm[j]].pair == imps[perm[i]].pair) ++j;
        std::uint32_t param;
        if (j - i < threshold) {
            param = 0;
            ++ds.pooled_pairs;
        } else {
            param = next_param++;
            const std::uint64_t key = imps[perm[i]].pair;
            ds.param_pair.emplace_back(ctx_of[static_cast<std::size_t>(key >> 32)],
                                       item_of[static_cast<std::size_t>(key & 0xffffffffull)]);
        }
        for (std::size_t k = i; k < j; ++k) imps[perm[k]].param = param;
        i = j;
    }

    const std::size_t n_params = next_param == 0 ? (ds.has_pooled ? 1 : 0) : next_param;
    ds.param_clicks.assign(n_params, 0);
    ds.param_count.assign(n_params, 0);

    // Sufficient statistics: impressions grouped by (param, position).
    std::unordered_map<std::uint64_t, std::size_t> group_index;
    group_index.reserve(imps.size() / 8 + 16);
    for (const auto& imp : imps) {
        std::uint64_t key = (static_cast<std::uint64_t>(imp.param) << 16) | imp.position;
        auto [it, is_new] = group_index.try_emplace(key, ds.groups.size());
        if (is_new) ds.groups.push_back(Group{imp.param, imp.position, 0, 0});
        Group& g = ds.groups[it->second];
        g.impressions += 1;
        g.clicks += imp.clicked ? 1 : 0;
        ds.param_clicks[imp.param] += imp.clicked ? 1 : 0;
        ds.param_count[imp.param] += 1;
    }
    std::sort(ds.groups.begin(), ds.groups.end(), [](const Group& a, const Group& b) {
        if (a.param != b.param) return a.param < b.param;
        return a.position < b.position;
    });
    return ds;
}

inline double grouped_log_likelihood(const Dataset& ds, const std::vector<double>& theta,
                                     const std::vector<double>& gamma, long long* clamped) {
    constexpr double kLo = 1e-12;
    constexpr double kHi = 1.0 - 1e-12;
    KahanSum ll;
    for (const auto& g : ds.groups) {
        double p = theta[g.position - 1] * gamma[g.param];
        if (p < kLo) {
            p = kLo;
            if (clamped) *clamped += static_cast<long long>(g.impressions);
        } else if (p > kHi) {
            p = kHi;
            if (clamped) *clamped += static_cast<long long>(g.impressions);
        }
        const auto noclicks = static_cast<double>(g.impressions - g.clicks);
        ll.add(static_cast<double>(g.clicks) * std::log(p) + noclicks * std::log1p(-p));
    }
    return ll.value();
}

}  // namespace em_detail

// Fits the position-bias curve (and nuisance relevance parameters) to logged
// sessions. The log-likelihood is non-decreasing across iterations up to
// numerical slack; a decrease beyond it indicates a broken update and throws.
inline EmFit fit_position_bias(const std::vector<Session>& sessions, const EmConfig& config = {}) {
    validate_em_config(config);
    em_detail::Dataset ds = em_detail::build_dataset(sessions, config);
    const std::size_t P = static_cast<std::size_t>(ds.num_positions);
    const std::size_t J = ds.param_count.size();

    // Initialization: rank-biased theta, per-parameter empirical CTR.
    std::vector<double> theta(P), gamma(J);
    for (std::size_t k = 0; k < P; ++k) theta[k] = 1.0 / static_cast<double>(k + 1);
    for (std::size_t j = 0; j < J; ++j) {
        double ctr = ds.param_count[j] > 0
                         ? static_cast<double>(ds.param_clicks[j]) / static_cast<double>(ds.param_count[j])
                         : 0.5;
        gamma[j] = std::clamp(ctr, 0.01, 0.99);
    }

    EmFit fit;
    fit.diagnostics.pooled_pairs = ds.pooled_pairs;
    fit.diagnostics.estimated_pairs = static_cast<long long>(ds.param_pair.size());

    std::vector<KahanSum> theta_num(P);
    std::vector<std::uint64_t> theta_den(P, 0);
    std::vector<KahanSum> gamma_num(J);
    std::vector<std::uint64_t> gamma_den(J, 0);
    for (const auto& g : ds.groups) {
        theta_den[g.position - 1] += g.impressions;
        gamma_den[g.param] += g.impressions;
    }

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        for (auto& s : theta_num) s = KahanSum{};
        for (auto& s : gamma_num) s = KahanSum{};

        double ll = em_detail::grouped_log_likelihood(ds, theta, gamma,
                                                      &fit.diagnostics.loglik_clamped_terms);
        // Monotonicity guard, relative slack for accumulation error.
        if (ll + 1e-9 * (1.0 + std::abs(prev_ll)) < prev_ll)
            throw std::logic_error("EM log-likelihood decreased: " + std::to_string(prev_ll) +
                                   " -> " + std::to_string(ll));
        fit.diagnostics.loglik_trace.push_back(ll);
        prev_ll = ll;

        for (const auto& g : ds.groups) {
            const double th = theta[g.position - 1];
            const double ga = gamma[g.param];
            const double pc = std::min(th * ga, 1.0 - 1e-12);
            const auto clicks = static_cast<double>(g.clicks);
            const auto noclicks = static_cast<double>(g.impressions - g.clicks);
            // Clicked impressions have posterior 1 for both latents.
            theta_num[g.position - 1].add(clicks + noclicks * th * (1.0 - ga) / (1.0 - pc));
            gamma_num[g.param].add(clicks + noclicks * ga * (1.0 - th) / (1.0 - pc));
        }

        double delta = 0.0;
        for (std::size_t k = 0; k < P; ++k) {
            if (theta_den[k] == 0) continue;  // untouched; handled after the loop
            double nv = theta_num[k].value() / static_cast<double>(theta_den[k]);
            delta = std::max(delta, std::abs(nv - theta[k]));
            theta[k] = nv;
        }
        for (std::size_t j = 0; j < J; ++j) {
            if (gamma_den[j] == 0) continue;
            double nv = gamma_num[j].value() / static_cast<double>(gamma_den[j]);
            delta = std::max(delta, std::abs(nv - gamma[j]));
            gamma[j] = nv;
        }
        fit.iterations_run = iter + 1;
        if (delta < config.tolerance) {
            fit.converged = true;
            break;
        }
    }

    // Normalization to theta[1] = 1, applied once after convergence; gamma is
    // rescaled jointly so all products (hence the likelihood) are preserved.
    const double t1 = theta[0];
    for (std::size_t k = 0; k < P; ++k) {
        if (theta_den[k] == 0) continue;  // overwritten by the floor below
        theta[k] /= t1;
        if (theta[k] > 1.0) {
            theta[k] = 1.0;
            ++fit.diagnostics.normalization_clamped;
        }
    }
    for (std::size_t j = 0; j < J; ++j) gamma[j] = std::min(gamma[j] * t1, 1.0);

    for (std::size_t k = 0; k < P; ++k) {
        if (theta_den[k] == 0) {
            theta[k] = config.theta_floor;
            fit.diagnostics.zero_impression_positions.push_back(static_cast<int>(k + 1));
        } else if (theta[k] < config.theta_floor) {
            theta[k] = config.theta_floor;
            ++fit.diagnostics.floored_positions;
        }
    }

    fit.final_log_likelihood = em_detail::grouped_log_likelihood(ds, theta, gamma, nullptr);
    fit.theta = PositionBiasCurve(theta);

    RelevanceTable table;
    if (ds.has_pooled) table.set_default(gamma[0]);
    const std::size_t first_pair_param = ds.has_pooled ? 1 : 0;
    for (std::size_t j = first_pair_param; j < J; ++j) {
        const auto& [ctx, item] = ds.param_pair[j - first_pair_param];
        table.set(ctx, item, gamma[j]);
    }
    fit.gamma = table;
    return fit;
}

}  // namespace pbope
