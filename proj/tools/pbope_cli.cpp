// pbope: offline evaluation of deterministic ranking policies from logged
// clicks, with a position-bias simulator, EM curve fitting, counterfactual
// position assignment and an end-to-end experiment runner.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pbope/pbope.hpp"

namespace {

using nlohmann::json;

int run_simulate(const std::string& config_path, const std::string& policy_path,
                 const std::string& out_path, const std::string& sidecar_path) {
    pbope::SimConfig config = pbope::sim_config_from_json(pbope::read_json_file(config_path));
    pbope::RankingPolicy policy =
        pbope::policy_from_json(pbope::read_json_file(policy_path), &config.relevance);
    auto sessions = pbope::simulate_log(policy, config);
    pbope::write_sessions(out_path, pbope::sim_log_header(config), sessions);
    if (!sidecar_path.empty()) pbope::write_sidecar(sidecar_path, config);
    std::cerr << "simulate: wrote " << sessions.size() << " sessions to " << out_path << "\n";
    return 0;
}

int run_fit_bias(const std::string& in_path, const std::string& out_path,
                 const pbope::EmConfig& em) {
    pbope::ParsedLog log = pbope::parse_sessions(in_path);
    pbope::EmFit fit = pbope::fit_position_bias(log.sessions, em);
    json diag;
    diag["iterations_run"] = fit.iterations_run;
    diag["converged"] = fit.converged;
    diag["final_log_likelihood"] = fit.final_log_likelihood;
    diag["zero_impression_positions"] = fit.diagnostics.zero_impression_positions;
    diag["loglik_clamped_terms"] = fit.diagnostics.loglik_clamped_terms;
    diag["normalization_clamped"] = fit.diagnostics.normalization_clamped;
    diag["floored_positions"] = fit.diagnostics.floored_positions;
    diag["pooled_pairs"] = fit.diagnostics.pooled_pairs;
    diag["estimated_pairs"] = fit.diagnostics.estimated_pairs;
    json out{{"theta", fit.theta.values()}, {"diagnostics", diag}};
    pbope::write_json_file(out_path, out);
    std::cerr << "fit-bias: " << log.sessions.size() << " sessions, " << fit.iterations_run
              << " iterations, converged=" << (fit.converged ? "yes" : "no") << "\n";
    return 0;
}

std::vector<pbope::AssignmentRecord> assignment_records(const std::vector<pbope::Session>& sessions,
                                                        const pbope::PositionAssignment& asg) {
    std::vector<pbope::AssignmentRecord> records;
    for (const auto& s : sessions) {
        for (const auto& imp : s.impressions) {
            if (auto p = asg.lookup(s.session_id, imp.item))
                records.push_back({s.session_id, imp.item, *p});
        }
    }
    return records;
}

int run_assign(const std::string& mode, const std::string& sessions_path,
               const std::string& scores_path, const std::string& control_path,
               const std::string& treatment_path, const std::string& out_path) {
    pbope::PositionAssignment asg;
    std::vector<pbope::Session> base_sessions;
    if (mode == "rescore") {
        if (sessions_path.empty() || scores_path.empty())
            throw CLI::ValidationError("assign", "--mode rescore needs --sessions and --scores");
        base_sessions = pbope::parse_sessions(sessions_path).sessions;
        auto policy = pbope::score_table_policy(pbope::read_scores_jsonl(scores_path));
        asg = pbope::rescore_log(base_sessions, policy);
    } else if (mode == "join") {
        if (control_path.empty() || treatment_path.empty())
            throw CLI::ValidationError("assign", "--mode join needs --control and --treatment");
        base_sessions = pbope::parse_sessions(control_path).sessions;
        auto treatment = pbope::parse_sessions(treatment_path).sessions;
        asg = pbope::join_positions(base_sessions, treatment);
    } else {
        throw CLI::ValidationError("assign", "unknown --mode '" + mode + "'");
    }
    pbope::write_assignment_jsonl(out_path, assignment_records(base_sessions, asg));
    if (asg.warning) std::cerr << "assign: warning: " << *asg.warning << "\n";
    std::fprintf(stderr, "assign: coverage %.4f (%zu/%zu impressions)\n", asg.coverage(),
                 asg.assigned, asg.total);
    return 0;
}

int run_evaluate(const std::string& sessions_path, const std::string& assignment_path,
                 const std::string& theta_path, const std::string& reward,
                 std::optional<double> clip, const std::string& denominator,
                 const std::string& out_path) {
    auto log = pbope::parse_sessions(sessions_path);
    pbope::PositionBiasCurve theta = pbope::read_theta_json(theta_path);

    pbope::PositionAssignment asg;
    for (const auto& r : pbope::read_assignment_jsonl(assignment_path))
        asg.set(r.session_id, r.item, r.p);
    for (const auto& s : log.sessions) {
        for (const auto& imp : s.impressions) {
            ++asg.total;
            if (asg.lookup(s.session_id, imp.item)) ++asg.assigned;
        }
    }

    pbope::EstimatorConfig config;
    config.reward.kind = pbope::reward_from_name(reward);
    config.clip_ratio = clip;
    if (denominator == "sessions") config.denominator = pbope::Denominator::Sessions;
    else if (denominator == "appearances") config.denominator = pbope::Denominator::Appearances;
    else throw CLI::ValidationError("evaluate", "unknown --denominator '" + denominator + "'");

    pbope::EvalDiagnostics diag;
    pbope::OpeResult result = pbope::pb_ips(log.sessions, asg, theta, config, &diag);

    json out;
    out["value"] = result.value;
    out["n"] = result.n;
    out["std_error"] = result.std_error;
    out["effective_sample_size"] = result.effective_sample_size;
    out["clipped_terms"] = result.clipped_terms;
    json jd;
    jd["denominator"] = denominator;
    jd["reward"] = reward;
    if (clip) jd["clip_ratio"] = *clip;
    jd["n_sessions"] = diag.n_sessions;
    jd["n_appearances"] = diag.n_appearances;
    jd["dropped_sessions"] = diag.dropped_sessions;
    jd["empty_sessions"] = diag.empty_sessions;
    jd["clicked_sessions"] = diag.clicked_sessions;
    jd["assignment_coverage"] = diag.assignment_coverage;
    out["diagnostics"] = jd;
    if (out_path.empty()) std::cout << out.dump(2) << "\n";
    else pbope::write_json_file(out_path, out);
    return 0;
}

int run_experiment_cmd(const std::string& spec_path, const std::string& out_path,
                       const std::string& mode_flag, const std::string& theta_flag,
                       const std::string& keep_logs_dir) {
    json spec_json = spec_path.empty() ? json::object() : pbope::read_json_file(spec_path);
    if (!mode_flag.empty()) spec_json["mode"] = mode_flag == "text-search" ? "text_search" : mode_flag;
    pbope::ExperimentSpec spec = pbope::experiment_spec_from_json(spec_json);

    pbope::ExperimentHooks hooks;
    namespace fs = std::filesystem;
    if (!keep_logs_dir.empty()) {
        fs::create_directories(keep_logs_dir);
        hooks.log_sink = [&](const std::string& name, const pbope::LogHeader& header,
                             const std::vector<pbope::Session>& sessions) {
            pbope::write_sessions((fs::path(keep_logs_dir) / (name + ".jsonl")).string(), header,
                                  sessions);
        };
    }

    pbope::PositionBiasCurve from_file;
    if (theta_flag == "oracle") {
        spec.theta_source = pbope::ExperimentSpec::ThetaSource::Oracle;
    } else if (theta_flag == "em" || theta_flag.empty()) {
        spec.theta_source = pbope::ExperimentSpec::ThetaSource::Em;
        if (!keep_logs_dir.empty()) {
            // File-mediated fit: the curve is estimated from the pre-period
            // file on disk, never from the evaluated days' logs.
            auto pre = pbope::simulate_pre_period(spec);
            const std::string pre_path = (fs::path(keep_logs_dir) / "pre_period.jsonl").string();
            pbope::write_sessions(pre_path, pbope::sim_log_header(spec.sim), pre);
            auto reloaded = pbope::parse_sessions(pre_path);
            std::string desc;
            from_file = pbope::fit_experiment_theta(spec, reloaded.sessions, &desc);
            hooks.theta_override = &from_file;
            hooks.theta_desc = desc + " via " + pre_path;
        }
    } else {
        from_file = pbope::read_theta_json(theta_flag);
        hooks.theta_override = &from_file;
        hooks.theta_desc = "file:" + theta_flag;
    }

    pbope::ExperimentResult result = pbope::run_experiment(spec, hooks);
    pbope::emit_report(result.reports, result.summary, out_path);
    std::cerr << "experiment: " << result.reports.size() << " days -> " << out_path;
    if (result.summary.pearson)
        std::fprintf(stderr, " (pearson %.4f, mean offset %.6g)", *result.summary.pearson,
                     result.summary.mean_offset);
    std::cerr << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Offline evaluation of deterministic ranking policies using "
                 "position-bias examination probabilities as propensities"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic click log");
    std::string sim_config, sim_policy, sim_out, sim_sidecar;
    sim->add_option("--config", sim_config, "Simulator config JSON")->required();
    sim->add_option("--policy", sim_policy, "Logging policy JSON")->required();
    sim->add_option("--out", sim_out, "Output sessions JSONL")->required();
    sim->add_option("--sidecar", sim_sidecar, "Ground-truth sidecar JSON");

    // fit-bias
    auto* fit = app.add_subcommand("fit-bias", "Fit the position-bias curve by EM");
    std::string fit_in, fit_out;
    pbope::EmConfig em;
    fit->add_option("--in", fit_in, "Sessions JSONL")->required();
    fit->add_option("--out", fit_out, "Output curve JSON")->required();
    fit->add_option("--max-iterations", em.max_iterations, "EM iteration cap");
    fit->add_option("--tolerance", em.tolerance, "Max absolute parameter change to stop");
    fit->add_option("--theta-floor", em.theta_floor, "Floor on fitted examination probabilities");
    fit->add_option("--min-pair-impressions", em.min_pair_impressions,
                    "Pairs with fewer impressions share the pooled relevance parameter");
    fit->add_option("--num-positions", em.num_positions, "Curve length (0 = infer from data)");

    // assign
    auto* asg = app.add_subcommand("assign", "Assign counterfactual positions");
    std::string asg_mode, asg_sessions, asg_scores, asg_control, asg_treatment, asg_out;
    asg->add_option("--mode", asg_mode, "rescore|join")->required();
    asg->add_option("--sessions", asg_sessions, "Sessions JSONL (rescore mode)");
    asg->add_option("--scores", asg_scores, "Policy score file JSONL (rescore mode)");
    asg->add_option("--control", asg_control, "Control sessions JSONL (join mode)");
    asg->add_option("--treatment", asg_treatment, "Treatment sessions JSONL (join mode)");
    asg->add_option("--out", asg_out, "Output assignment JSONL")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Compute the position-bias IPS estimate");
    std::string ev_sessions, ev_assignment, ev_theta, ev_out;
    std::string ev_reward = "clicks", ev_denominator = "sessions";
    double ev_clip = 0.0;
    ev->add_option("--sessions", ev_sessions, "Sessions JSONL")->required();
    ev->add_option("--assignment", ev_assignment, "Assignment JSONL")->required();
    ev->add_option("--theta", ev_theta, "Curve JSON (fit-bias output or simulator sidecar)")
        ->required();
    ev->add_option("--reward", ev_reward, "clicks|dcg|precision");
    auto* clip_opt = ev->add_option("--clip", ev_clip, "Cap propensity ratios at M (> 1)");
    ev->add_option("--denominator", ev_denominator, "sessions|appearances");
    ev->add_option("--out", ev_out, "Output JSON (default: stdout)");

    // experiment
    auto* ex = app.add_subcommand("experiment", "Day-by-day OPE vs online CTR comparison");
    std::string ex_spec, ex_out, ex_mode, ex_theta, ex_keep;
    ex->add_option("--spec", ex_spec, "Experiment spec JSON (defaults apply per mode)");
    ex->add_option("--out", ex_out, "Output report CSV (summary JSON written alongside)")
        ->required();
    ex->add_option("--mode", ex_mode, "moo|text-search (overrides the spec file)");
    ex->add_option("--theta", ex_theta, "em|oracle|<curve.json>");
    ex->add_option("--keep-logs", ex_keep, "Directory for pre-period and per-day logs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (sim->parsed()) return run_simulate(sim_config, sim_policy, sim_out, sim_sidecar);
        if (fit->parsed()) return run_fit_bias(fit_in, fit_out, em);
        if (asg->parsed())
            return run_assign(asg_mode, asg_sessions, asg_scores, asg_control, asg_treatment,
                              asg_out);
        if (ev->parsed()) {
            std::optional<double> clip;
            if (clip_opt->count() > 0) clip = ev_clip;
            return run_evaluate(ev_sessions, ev_assignment, ev_theta, ev_reward, clip,
                                ev_denominator, ev_out);
        }
        if (ex->parsed()) return run_experiment_cmd(ex_spec, ex_out, ex_mode, ex_theta, ex_keep);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
