#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbope/counterfactual.hpp"
#include "pbope/domain.hpp"
#include "pbope/em.hpp"
#include "pbope/estimator.hpp"
#include "pbope/json_io.hpp"
#include "pbope/policies.hpp"
#include "pbope/simulate.hpp"
#include "pbope/util.hpp"

namespace pbope {

// End-to-end experiment: simulate control/treatment A/B logs over D days,
// estimate the treatment's value offline from the control logs, measure its
// online CTR from the treatment logs, and compare day by day. Day-to-day
// variation comes from a multiplicative drift on relevance; the examination
// curve is treated as stable and fit once on pre-period logs.

struct PrePeriodSpec {
    int days = 3;
    int sessions_per_day = 4000;
    // Ranker variants rotated across pre-period days. Pair relevance is only
    // identifiable when items move across positions, which in production
    // comes from ranker changes within the fitting window.
    std::vector<std::uint64_t> variant_salts = {101, 202};
    double jitter_strength = 2.5;
};

struct ExperimentSpec {
    SimConfig sim;  // base population; sim.days / sim.first_day are managed per day
    RankingPolicy policy_control;
    RankingPolicy policy_treatment;
    int days = 11;
    std::vector<double> drift;  // per-day multiplicative factor on relevance
    Surface mode = Surface::Moo;
    RewardSpec reward{};
    std::uint64_t seed = 1;
    enum class ThetaSource { Em, Oracle } theta_source = ThetaSource::Em;
    PrePeriodSpec pre_period;
    EmConfig em;
};

struct DailyReport {
    int day = 0;
    double ope = 0.0;
    double online_ctr = 0.0;
    double offset = 0.0;  // ope - online_ctr
    long long n_control = 0;
    long long n_treatment = 0;
};

struct ExperimentSummary {
    std::optional<double> pearson;  // absent when either series is constant
    std::string note;
    double mean_offset = 0.0;
    double offset_sd = 0.0;
    double ope_sd = 0.0;
    double ctr_sd = 0.0;
    double mean_ope = 0.0;
    double mean_ctr = 0.0;
    std::string theta_source;
    int days = 0;
};

struct ExperimentResult {
    std::vector<DailyReport> reports;
    ExperimentSummary summary;
    PositionBiasCurve theta_used;
};

inline std::vector<double> linear_drift(int days, double start, double step) {
    std::vector<double> d(static_cast<std::size_t>(days));
    for (int i = 0; i < days; ++i) d[static_cast<std::size_t>(i)] = start + step * i;
    return d;
}

inline void validate_experiment_spec(const ExperimentSpec& spec) {
    if (spec.days < 2) throw DataError("experiment: need at least 2 days for a correlation");
    if (spec.drift.size() != static_cast<std::size_t>(spec.days))
        throw DataError("experiment: drift schedule must have one factor per day");
    for (double f : spec.drift)
        if (!(f > 0.0)) throw DataError("experiment: drift factors must be > 0");
    if (spec.mode == Surface::TextSearch && spec.sim.surface != Surface::TextSearch)
        throw DataError("experiment: text-search mode needs a text-search population (queries)");
    if (spec.pre_period.days < 1 || spec.pre_period.sessions_per_day < 1)
        throw DataError("experiment: pre-period must have at least one day of sessions");
}

// Pre-period log for curve fitting, simulated under a rotation of the
// control policy and its jittered variants. Uses its own seed stream and the
// base (undrifted) relevance: strictly distinct from the evaluated days.
inline std::vector<Session> simulate_pre_period(const ExperimentSpec& spec) {
    std::vector<RankingPolicy> variants{spec.policy_control};
    for (std::uint64_t salt : spec.pre_period.variant_salts)
        variants.push_back(jitter_policy(spec.policy_control, salt, spec.pre_period.jitter_strength));
    std::vector<Session> out;
    out.reserve(static_cast<std::size_t>(spec.pre_period.days) *
                static_cast<std::size_t>(spec.pre_period.sessions_per_day));
    for (int d = 0; d < spec.pre_period.days; ++d) {
        SimConfig cfg = spec.sim;
        cfg.days = 1;
        cfg.first_day = d;
        cfg.sessions_per_day = spec.pre_period.sessions_per_day;
        cfg.seed = splitmix64(spec.seed ^ 0x5052455045524Dull);  // pre-period stream
        const RankingPolicy& policy = variants[static_cast<std::size_t>(d) % variants.size()];
        auto day_log = simulate_log(policy, cfg);
        for (auto& s : day_log) out.push_back(std::move(s));
    }
    return out;
}

inline PositionBiasCurve fit_experiment_theta(const ExperimentSpec& spec,
                                              const std::vector<Session>& pre_period,
                                              std::string* desc = nullptr) {
    if (spec.theta_source == ExperimentSpec::ThetaSource::Oracle) {
        if (desc) *desc = "oracle";
        return spec.sim.theta_true;
    }
    EmConfig em = spec.em;
    if (em.num_positions == 0) em.num_positions = spec.sim.list_length;
    EmFit fit = fit_position_bias(pre_period, em);
    if (desc)
        *desc = "em(pre-period, " + std::to_string(pre_period.size()) + " sessions, " +
                std::to_string(fit.iterations_run) + " iterations)";
    return fit.theta;
}

// Optional wiring for file-mediated runs: a sink receiving every simulated
// log by name ("pre_period", "day_03_control", ...) and a pre-fit curve that
// bypasses the pre-period entirely (e.g. one loaded from a file).
struct ExperimentHooks {
    std::function<void(const std::string& name, const LogHeader&, const std::vector<Session>&)>
        log_sink;
    const PositionBiasCurve* theta_override = nullptr;
    std::string theta_desc = "provided";
};

inline ExperimentResult run_experiment(const ExperimentSpec& spec,
                                       const ExperimentHooks& hooks = {}) {
    validate_experiment_spec(spec);

    ExperimentResult result;
    std::string theta_desc;
    if (hooks.theta_override) {
        result.theta_used = *hooks.theta_override;
        theta_desc = hooks.theta_desc;
    } else {
        // Pre-period sessions go out of scope before any evaluated day
        // exists; the curve is never fit on a day it scores.
        std::vector<Session> pre_period = simulate_pre_period(spec);
        if (hooks.log_sink) hooks.log_sink("pre_period", sim_log_header(spec.sim), pre_period);
        result.theta_used = fit_experiment_theta(spec, pre_period, &theta_desc);
    }

    // The daily series compare per-appearance rates on both sides, the
    // convention of the per-appearance CTR experiment; a per-session OPE
    // against a per-view CTR would differ by a factor of the list length.
    EstimatorConfig est;
    est.reward = spec.reward;
    est.denominator = Denominator::Appearances;

    std::vector<double> opes, ctrs;
    for (int d = 0; d < spec.days; ++d) {
        const double factor = spec.drift[static_cast<std::size_t>(d)];
        // Common random numbers across days: the same session panel is
        // replayed every day, so day-to-day differences come from the drift
        // alone and zero drift yields literally identical days.
        SimConfig day_cfg = spec.sim;
        day_cfg.relevance = spec.sim.relevance.scaled(factor);
        day_cfg.days = 1;
        day_cfg.first_day = 0;
        day_cfg.sessions_per_day = spec.sim.sessions_per_day;

        auto relabel = [d](std::vector<Session>& log) {
            char id[48];
            for (std::size_t i = 0; i < log.size(); ++i) {
                log[i].day = d;
                std::snprintf(id, sizeof(id), "d%d-s%06zu", d, i);
                log[i].session_id = id;
            }
        };
        SimConfig control_cfg = day_cfg;
        control_cfg.seed = splitmix64(spec.seed ^ 0x434F4E54524F4Cull);
        auto control = simulate_log(spec.policy_control, control_cfg);
        relabel(control);

        SimConfig treatment_cfg = day_cfg;
        treatment_cfg.seed = splitmix64(spec.seed ^ 0x5452454154ull);
        auto treatment = simulate_log(spec.policy_treatment, treatment_cfg);
        relabel(treatment);

        if (hooks.log_sink) {
            char name[40];
            std::snprintf(name, sizeof(name), "day_%02d_control", d);
            hooks.log_sink(name, sim_log_header(control_cfg), control);
            std::snprintf(name, sizeof(name), "day_%02d_treatment", d);
            hooks.log_sink(name, sim_log_header(treatment_cfg), treatment);
        }

        PositionAssignment assignment =
            spec.mode == Surface::Moo ? rescore_log(control, spec.policy_treatment)
                                      : join_positions(control, treatment);

        DailyReport r;
        r.day = d;
        r.ope = pb_ips(control, assignment, result.theta_used, est).value;
        r.online_ctr = spec.mode == Surface::Moo ? ctr_moo(treatment) : ctr_text_search(treatment);
        r.offset = r.ope - r.online_ctr;
        r.n_control = static_cast<long long>(control.size());
        r.n_treatment = static_cast<long long>(treatment.size());
        result.reports.push_back(r);
        opes.push_back(r.ope);
        ctrs.push_back(r.online_ctr);
    }

    std::vector<double> offsets;
    for (const auto& r : result.reports) offsets.push_back(r.offset);
    ExperimentSummary& sum = result.summary;
    sum.days = spec.days;
    sum.theta_source = theta_desc;
    sum.mean_offset = mean_of(offsets);
    sum.offset_sd = sample_sd(offsets);
    sum.ope_sd = sample_sd(opes);
    sum.ctr_sd = sample_sd(ctrs);
    sum.mean_ope = mean_of(opes);
    sum.mean_ctr = mean_of(ctrs);
    double rho = pearson(opes, ctrs);
    if (std::isnan(rho)) {
        sum.note = "correlation undefined: at least one daily series is constant";
    } else {
        sum.pearson = rho;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Report emission: CSV of the daily series plus a JSON summary sidecar.
// Byte-stable for fixed inputs.
// ---------------------------------------------------------------------------

inline std::string summary_sidecar_path(const std::string& csv_path) {
    if (csv_path.size() > 4 && csv_path.substr(csv_path.size() - 4) == ".csv")
        return csv_path.substr(0, csv_path.size() - 4) + ".summary.json";
    return csv_path + ".summary.json";
}

inline nlohmann::json summary_to_json(const ExperimentSummary& s) {
    nlohmann::json j;
    j["days"] = s.days;
    if (s.pearson) j["pearson"] = *s.pearson;
    else j["pearson"] = nullptr;
    if (!s.note.empty()) j["note"] = s.note;
    j["mean_offset"] = s.mean_offset;
    j["offset_sd"] = s.offset_sd;
    j["ope_sd"] = s.ope_sd;
    j["ctr_sd"] = s.ctr_sd;
    j["mean_ope"] = s.mean_ope;
    j["mean_ctr"] = s.mean_ctr;
    j["theta_source"] = s.theta_source;
    return j;
}

inline void emit_report(const std::vector<DailyReport>& reports, const ExperimentSummary& summary,
                        const std::string& csv_path) {
    if (reports.empty()) throw DataError("emit_report: no daily reports");
    std::ofstream out(csv_path);
    if (!out) throw DataError("cannot write '" + csv_path + "'");
    out << "day,ope,online_ctr,offset,n_control,n_treatment\n";
    char buf[160];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%lld,%lld\n", r.day, r.ope,
                      r.online_ctr, r.offset, r.n_control, r.n_treatment);
        out << buf;
    }
    if (!out) throw DataError("write failed for '" + csv_path + "'");
    write_json_file(summary_sidecar_path(csv_path), summary_to_json(summary));
}

// ---------------------------------------------------------------------------
// Spec construction
// ---------------------------------------------------------------------------

// Synthetic population with hash-generated relevance. Text-search contexts
// share queries across users (the join needs repeated queries) and relevance
// is keyed by (query, item); moo relevance is keyed by (user, item).
inline SimConfig make_population(Surface surface, int num_contexts, int num_queries, int num_items,
                                 int list_length, const std::vector<double>& theta,
                                 std::uint64_t gamma_salt, double gamma_lo, double gamma_hi) {
    SimConfig cfg;
    cfg.surface = surface;
    cfg.items = make_default_items(num_items);
    cfg.list_length = list_length;
    cfg.theta_true = PositionBiasCurve(theta);
    char buf[32];
    for (int i = 0; i < num_contexts; ++i) {
        std::snprintf(buf, sizeof(buf), "u%05d", i);
        ContextId ctx{buf, std::nullopt};
        if (surface == Surface::TextSearch) {
            char q[32];
            std::snprintf(q, sizeof(q), "q%03d", num_queries > 0 ? i % num_queries : 0);
            ctx.query = q;
        }
        cfg.contexts.push_back(std::move(ctx));
    }
    RelevanceTable rel;
    const bool by_query = surface == Surface::TextSearch;
    rel.set_generator([gamma_salt, gamma_lo, gamma_hi, by_query](const ContextId& ctx,
                                                                 const ItemId& item) {
        const std::string& key = by_query ? *ctx.query : ctx.user;
        return gamma_lo + (gamma_hi - gamma_lo) * hash_unit({key, item}, gamma_salt);
    });
    cfg.relevance = rel;
    return cfg;
}

inline std::vector<double> default_theta_curve(int positions) {
    std::vector<double> theta(static_cast<std::size_t>(positions));
    double v = 1.0;
    for (int k = 0; k < positions; ++k) {
        theta[static_cast<std::size_t>(k)] = v;
        v *= 0.82;  // decays slowly; deep positions keep non-trivial mass
    }
    return theta;
}

// Desk-scale defaults for the day-by-day comparison in either mode.
inline ExperimentSpec default_experiment_spec(Surface mode, std::uint64_t seed = 20240601) {
    ExperimentSpec spec;
    spec.mode = mode;
    spec.days = 11;
    spec.seed = seed;
    spec.drift = linear_drift(spec.days, 0.60, 0.07);
    const int L = 8;
    spec.sim = make_population(mode, /*num_contexts=*/48, /*num_queries=*/16, /*num_items=*/12, L,
                               default_theta_curve(L), /*gamma_salt=*/seed ^ 0x11, 0.05, 0.60);
    spec.sim.sessions_per_day = 4000;
    spec.sim.seed = seed;
    spec.policy_control = noisy_oracle_policy(spec.sim.relevance, 0.35, seed ^ 0x22);
    spec.policy_treatment = swap_top_two_policy(spec.policy_control);
    spec.reward = RewardSpec{RewardKind::Clicks};
    spec.theta_source = ExperimentSpec::ThetaSource::Em;
    spec.pre_period.days = 3;
    spec.pre_period.sessions_per_day = 4000;
    return spec;
}

// Parses an experiment spec file. Minimal specs are valid: every field has
// the default_experiment_spec value for its mode.
inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
    const std::string mode_name = j.value("mode", "moo");
    Surface mode;
    if (mode_name == "moo") mode = Surface::Moo;
    else if (mode_name == "text_search" || mode_name == "text-search") mode = Surface::TextSearch;
    else throw DataError("experiment spec: unknown mode '" + mode_name + "'");

    const auto seed = j.value("seed", std::uint64_t{20240601});
    ExperimentSpec spec = default_experiment_spec(mode, seed);
    spec.days = j.value("days", spec.days);
    spec.reward.kind = reward_from_name(j.value("reward", "clicks"));

    if (auto it = j.find("sim"); it != j.end()) {
        const auto& js = *it;
        const int L = js.value("list_length", 8);
        std::vector<double> theta;
        if (auto t = js.find("theta"); t != js.end()) theta = t->get<std::vector<double>>();
        else theta = default_theta_curve(L);
        spec.sim = make_population(mode, js.value("num_contexts", 48), js.value("num_queries", 16),
                                   js.value("num_items", 12), L, theta,
                                   js.value("gamma_salt", seed ^ 0x11),
                                   js.value("gamma_lo", 0.05), js.value("gamma_hi", 0.60));
        spec.sim.sessions_per_day = js.value("sessions_per_day", 4000);
        spec.sim.seed = seed;
        // Policies reference the population's relevance; rebuild the defaults.
        spec.policy_control = noisy_oracle_policy(spec.sim.relevance, 0.35, seed ^ 0x22);
        spec.policy_treatment = swap_top_two_policy(spec.policy_control);
    }
    if (auto it = j.find("drift"); it != j.end()) {
        if (it->is_array()) spec.drift = it->get<std::vector<double>>();
        else
            spec.drift = linear_drift(spec.days, it->value("start", 0.60), it->value("step", 0.07));
    } else if (spec.days != 11) {
        spec.drift = linear_drift(spec.days, 0.60, 0.07);
    }
    if (auto it = j.find("policy_control"); it != j.end())
        spec.policy_control = policy_from_json(*it, &spec.sim.relevance);
    if (auto it = j.find("policy_treatment"); it != j.end())
        spec.policy_treatment = policy_from_json(*it, &spec.sim.relevance);
    if (auto it = j.find("theta_source"); it != j.end()) {
        const std::string src = it->get<std::string>();
        if (src == "em") spec.theta_source = ExperimentSpec::ThetaSource::Em;
        else if (src == "oracle") spec.theta_source = ExperimentSpec::ThetaSource::Oracle;
        else throw DataError("experiment spec: unknown theta_source '" + src + "'");
    }
    if (auto it = j.find("pre_period"); it != j.end()) {
        spec.pre_period.days = it->value("days", spec.pre_period.days);
        spec.pre_period.sessions_per_day =
            it->value("sessions_per_day", spec.pre_period.sessions_per_day);
        if (auto s = it->find("variant_salts"); s != it->end())
            spec.pre_period.variant_salts = s->get<std::vector<std::uint64_t>>();
        spec.pre_period.jitter_strength = it->value("jitter_strength", 2.5);
    }
    if (auto it = j.find("em"); it != j.end()) {
        spec.em.max_iterations = it->value("max_iterations", spec.em.max_iterations);
        spec.em.tolerance = it->value("tolerance", spec.em.tolerance);
        spec.em.theta_floor = it->value("theta_floor", spec.em.theta_floor);
        spec.em.min_pair_impressions =
            it->value("min_pair_impressions", spec.em.min_pair_impressions);
        spec.em.num_positions = it->value("num_positions", spec.em.num_positions);
    }
    return spec;
}

}  // namespace pbope
