#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pbope/counterfactual.hpp"
#include "pbope/domain.hpp"
#include "pbope/util.hpp"

namespace pbope {

// Position-bias IPS: reweights each logged click by theta_p / theta_k, the
// ratio of examination probabilities at the item's counterfactual and logged
// positions, with the inner sum truncated at the last clicked position K.
//
//   V = (1/n) sum_sessions sum_{k=1..K} (theta_p / theta_k) alpha(k) r_{i,k}
//
// n is the number of sessions in which at least one item was shown (the
// default), or the number of impression appearances (the convention of the
// per-appearance CTR experiments); sessions without clicks contribute zero
// but are counted. Clip ratios at M to trade variance for bias.

enum class Denominator { Sessions, Appearances };

struct EstimatorConfig {
    RewardSpec reward{};
    std::optional<double> clip_ratio;  // M > 1; absent = no clipping
    Denominator denominator = Denominator::Sessions;
    // Counterfactual positions beyond the curve clamp to its last value:
    // extrapolating below the floor would manufacture huge ratios.
};

struct EvalDiagnostics {
    long long n_sessions = 0;      // sessions entering the denominator
    long long n_appearances = 0;   // impressions over those sessions
    long long dropped_sessions = 0;  // clicked sessions missing an assignment
    long long empty_sessions = 0;    // sessions with no impressions shown
    long long clicked_sessions = 0;
    double assignment_coverage = 1.0;
};

// Hard validity floor for propensities; fitted curves are floored far above
// this (see EmConfig::theta_floor), so hitting it means a degenerate curve.
inline constexpr double kEstimatorThetaFloor = 1e-9;

inline void validate_estimator_config(const EstimatorConfig& c) {
    if (c.clip_ratio && !(*c.clip_ratio > 1.0))
        throw DataError("estimator config: clip ratio M must be > 1");
}

inline OpeResult pb_ips(const std::vector<Session>& sessions,
                        const PositionAssignment& assignment, const PositionBiasCurve& theta,
                        const EstimatorConfig& config = {}, EvalDiagnostics* diag_out = nullptr) {
    validate_estimator_config(config);
    if (sessions.empty()) throw DataError("pb_ips: empty session list");
    for (double v : theta.values()) {
        if (v < kEstimatorThetaFloor)
            throw DataError("pb_ips: position-bias entry " + std::to_string(v) +
                            " below floor; fit the curve or pass the simulator sidecar");
    }

    enum class State : std::uint8_t { Ok, Empty, Dropped };
    struct PerSession {
        double reward_sum = 0.0;  // sum of ratio * alpha(k) over clicked k <= K
        double weight_sum = 0.0;  // sum of applied ratios (ESS diagnostic)
        long long clipped = 0;
        long long appearances = 0;
        State state = State::Ok;
    };
    std::vector<PerSession> per(sessions.size());
    std::vector<std::string> errors(sessions.size());

    parallel_for(sessions.size(), [&](std::size_t i) {
        const Session& s = sessions[i];
        PerSession& r = per[i];
        r.appearances = static_cast<long long>(s.impressions.size());
        if (s.impressions.empty()) {
            r.state = State::Empty;
            return;
        }
        auto k_max = session_truncation(s);
        if (!k_max) return;  // no clicks: zero contribution, counted in n
        for (const auto& imp : s.impressions) {
            if (imp.position > *k_max) break;  // impressions sorted by position
            auto p = assignment.lookup(s.session_id, imp.item);
            if (!p) {
                r.state = State::Dropped;
                return;
            }
            if (!imp.clicked) continue;  // r_{i,k} = 0 term
            const int k = imp.position;
            double theta_k;
            try {
                theta_k = theta.at(k);
            } catch (const DataError& e) {
                errors[i] = e.what();
                return;
            }
            double ratio = theta.at_clamped(*p) / theta_k;
            if (config.clip_ratio && ratio > *config.clip_ratio) {
                ratio = *config.clip_ratio;
                ++r.clipped;
            }
            r.reward_sum += ratio * alpha_weight(config.reward, k);
            r.weight_sum += ratio;
        }
    });
    for (const auto& e : errors) {
        if (!e.empty()) throw DataError("pb_ips: " + e);
    }

    EvalDiagnostics diag;
    diag.assignment_coverage = assignment.coverage();
    KahanSum sum_reward, sum_weight, sum_weight_sq;
    std::vector<double> session_values;
    session_values.reserve(sessions.size());
    long long clipped_terms = 0;
    for (const auto& r : per) {
        switch (r.state) {
            case State::Empty: ++diag.empty_sessions; continue;
            case State::Dropped: ++diag.dropped_sessions; continue;
            case State::Ok: break;
        }
        ++diag.n_sessions;
        diag.n_appearances += r.appearances;
        if (r.weight_sum > 0.0) ++diag.clicked_sessions;
        sum_reward.add(r.reward_sum);
        sum_weight.add(r.weight_sum);
        sum_weight_sq.add(r.weight_sum * r.weight_sum);
        session_values.push_back(r.reward_sum);
        clipped_terms += r.clipped;
    }
    const long long n = config.denominator == Denominator::Sessions ? diag.n_sessions
                                                                    : diag.n_appearances;
    if (n <= 0) throw DataError("pb_ips: no usable sessions (all empty or dropped)");

    OpeResult result;
    result.n = n;
    result.value = sum_reward.value() / static_cast<double>(n);
    result.clipped_terms = clipped_terms;
    // Standard error of the value: per-session sample sd propagated through
    // the denominator actually used.
    const double sd = sample_sd(session_values);
    result.std_error = sd * std::sqrt(static_cast<double>(diag.n_sessions)) / static_cast<double>(n);
    result.effective_sample_size =
        sum_weight_sq.value() > 0.0
            ? sum_weight.value() * sum_weight.value() / sum_weight_sq.value()
            : 0.0;
    if (diag_out) *diag_out = diag;
    return result;
}

// Per-appearance CTR: total clicks over total impression appearances (one
// appearance of an item in a ranked list is one data point).
inline double ctr_moo(const std::vector<Session>& sessions) {
    if (sessions.empty()) throw DataError("ctr_moo: empty session list");
    long long clicks = 0;
    long long appearances = 0;
    for (const auto& s : sessions) {
        appearances += static_cast<long long>(s.impressions.size());
        for (const auto& imp : s.impressions) clicks += imp.clicked ? 1 : 0;
    }
    if (appearances == 0) throw DataError("ctr_moo: no impressions in any session");
    return static_cast<double>(clicks) / static_cast<double>(appearances);
}

// Per-session CTR: mean over sessions of clicks/views.
inline double ctr_text_search(const std::vector<Session>& sessions) {
    if (sessions.empty()) throw DataError("ctr_text_search: empty session list");
    KahanSum acc;
    for (const auto& s : sessions) {
        long long clicks = 0;
        for (const auto& imp : s.impressions) clicks += imp.clicked ? 1 : 0;
        if (s.views <= 0) {
            if (clicks > 0)
                throw DataError("ctr_text_search: session '" + s.session_id +
                                "' has clicks but zero views (data integrity)");
            throw DataError("ctr_text_search: session '" + s.session_id + "' has zero views");
        }
        acc.add(static_cast<double>(clicks) / static_cast<double>(s.views));
    }
    return acc.value() / static_cast<double>(sessions.size());
}

}  // namespace pbope
