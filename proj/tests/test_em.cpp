#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "pbope/em.hpp"
#include "pbope/policies.hpp"
#include "pbope/simulate.hpp"

using namespace pbope;

namespace {

// Fresh context per session: every pair is sparse, so relevance pools into
// the background parameter and the curve is identified from the pooled rates.
SimConfig fresh_context_config(int n_sessions, int num_items, int list_length,
                               std::vector<double> theta, std::uint64_t seed, double gamma_lo,
                               double gamma_hi) {
    SimConfig cfg;
    cfg.items = make_default_items(num_items);
    cfg.list_length = list_length;
    cfg.theta_true = PositionBiasCurve(std::move(theta));
    cfg.seed = seed;
    cfg.sessions_per_day = n_sessions;
    cfg.contexts.reserve(static_cast<std::size_t>(n_sessions));
    char buf[32];
    for (int i = 0; i < n_sessions; ++i) {
        std::snprintf(buf, sizeof(buf), "v%06d", i);
        cfg.contexts.push_back(ContextId{buf, std::nullopt});
    }
    RelevanceTable rel;
    rel.set_generator([seed, gamma_lo, gamma_hi](const ContextId& ctx, const ItemId& item) {
        return gamma_lo + (gamma_hi - gamma_lo) * hash_unit({ctx.user, item}, seed ^ 0x5EED);
    });
    cfg.relevance = rel;
    return cfg;
}

double linf(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("log_likelihood closed forms") {
    RelevanceTable gamma(0.5);
    PositionBiasCurve theta({1.0});
    SECTION("single clicked impression at probability 0.5") {
        auto s = testutil::make_session("s", {{"a", true}});
        double ll = log_likelihood({s}, theta, gamma);
        CHECK(ll == Catch::Approx(std::log(0.5)).margin(1e-15));
    }
    SECTION("empty session list") {
        CHECK(log_likelihood({}, theta, gamma) == 0.0);
    }
    SECTION("degenerate certain probability is clamped and counted") {
        RelevanceTable sure(1.0);
        auto s = testutil::make_session("s", {{"a", false}});
        long long clamped = 0;
        double ll = log_likelihood({s}, theta, sure, &clamped);
        CHECK(clamped == 1);
        CHECK(std::isfinite(ll));
    }
}

TEST_CASE("EM recovers a flat curve") {
    auto cfg = fresh_context_config(100000, 6, 3, {1.0, 1.0, 1.0}, 42, 0.3, 0.3);
    auto log = simulate_log(hash_policy(4), cfg);
    auto fit = fit_position_bias(log);
    INFO("theta = " << fit.theta.values()[0] << ", " << fit.theta.values()[1] << ", "
                    << fit.theta.values()[2]);
    CHECK(linf(fit.theta.values(), {1.0, 1.0, 1.0}) < 0.05);
    CHECK(fit.theta.values()[0] == 1.0);
    CHECK(fit.diagnostics.pooled_pairs > 0);
    CHECK(fit.diagnostics.estimated_pairs == 0);
}

TEST_CASE("EM log-likelihood trace is non-decreasing and matches the public routine") {
    // Multi-position pairs: a small population logged under rotating rankers.
    auto cfg = testutil::small_sim_config(12, 8, 4, {1.0, 0.6, 0.4, 0.25}, 17, 0.1, 0.8);
    cfg.sessions_per_day = 1500;
    auto base = noisy_oracle_policy(cfg.relevance, 0.4, 3);
    auto log = simulate_log(base, cfg);
    for (auto variant_salt : {11u, 12u}) {
        auto cfg2 = cfg;
        cfg2.seed = cfg.seed + variant_salt;
        auto more = simulate_log(jitter_policy(base, variant_salt, 2.5), cfg2);
        log.insert(log.end(), more.begin(), more.end());
    }
    auto fit = fit_position_bias(log);
    REQUIRE(fit.diagnostics.loglik_trace.size() >= 2);
    for (std::size_t i = 1; i < fit.diagnostics.loglik_trace.size(); ++i) {
        double prev = fit.diagnostics.loglik_trace[i - 1];
        double cur = fit.diagnostics.loglik_trace[i];
        CHECK(cur >= prev - 1e-9 * (1.0 + std::abs(prev)));
    }
    // Grouped internal objective == per-impression public objective.
    double ll = log_likelihood(log, fit.theta, fit.gamma);
    CHECK(fit.final_log_likelihood == Catch::Approx(ll).epsilon(1e-9));
    // All fitted values live in [floor, 1] with theta[1] = 1 exactly.
    CHECK(fit.theta.values()[0] == 1.0);
    for (double v : fit.theta.values()) {
        CHECK(v >= 1e-3);
        CHECK(v <= 1.0);
    }
    CHECK(fit.diagnostics.estimated_pairs > 0);
}

TEST_CASE("scaled generative parameterizations fit to the same normalized curve") {
    // theta * c with gamma / c induces the same click law, so the fitted,
    // normalized curve must agree.
    const double c = 0.5;
    auto cfg_a = fresh_context_config(60000, 8, 4, {1.0, 0.6, 0.4, 0.25}, 404, 0.15, 0.45);
    auto cfg_b = fresh_context_config(60000, 8, 4, {1.0 * c, 0.6 * c, 0.4 * c, 0.25 * c}, 404,
                                      0.15 / c, 0.45 / c);
    auto fit_a = fit_position_bias(simulate_log(hash_policy(8), cfg_a));
    auto fit_b = fit_position_bias(simulate_log(hash_policy(8), cfg_b));
    CHECK(linf(fit_a.theta.values(), fit_b.theta.values()) < 0.02);
    CHECK(linf(fit_a.theta.values(), {1.0, 0.6, 0.4, 0.25}) < 0.05);
}

TEST_CASE("a position that is never clicked cannot out-rank observed ones") {
    std::vector<Session> log;
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 4000; ++i) {
        bool clicked = unit(rng) < 0.4;
        log.push_back(testutil::make_session(
            "s" + std::to_string(i),
            {{"a" + std::to_string(i), clicked}, {"b" + std::to_string(i), false}}));
    }
    auto fit = fit_position_bias(log);
    CHECK(fit.theta.values()[1] <= fit.theta.values()[0]);
}

TEST_CASE("positions with zero impressions are floored and flagged") {
    std::mt19937 rng(10);
    auto log = testutil::random_log(rng, 300, 3, 0.5);
    EmConfig cfg;
    cfg.num_positions = 5;  // positions 4 and 5 never occur
    auto fit = fit_position_bias(log, cfg);
    REQUIRE(fit.theta.max_position() == 5);
    CHECK(fit.diagnostics.zero_impression_positions == std::vector<int>{4, 5});
    CHECK(fit.theta.values()[3] == cfg.theta_floor);
    CHECK(fit.theta.values()[4] == cfg.theta_floor);
}

TEST_CASE("EM input validation") {
    CHECK_THROWS_AS(fit_position_bias({}), DataError);

    std::mt19937 rng(11);
    auto log = testutil::random_log(rng, 10, 4, 0.5);
    SECTION("positions beyond the configured curve length") {
        EmConfig cfg;
        cfg.num_positions = 2;
        CHECK_THROWS_AS(fit_position_bias(log, cfg), DataError);
    }
    SECTION("bad config values") {
        EmConfig cfg;
        cfg.max_iterations = 0;
        CHECK_THROWS_AS(fit_position_bias(log, cfg), DataError);
        cfg = EmConfig{};
        cfg.theta_floor = 0.0;
        CHECK_THROWS_AS(fit_position_bias(log, cfg), DataError);
        cfg = EmConfig{};
        cfg.tolerance = -1.0;
        CHECK_THROWS_AS(fit_position_bias(log, cfg), DataError);
    }
}

TEST_CASE("converged fits report convergence") {
    auto cfg = fresh_context_config(20000, 5, 3, {1.0, 0.5, 0.3}, 55, 0.2, 0.5);
    auto fit = fit_position_bias(simulate_log(hash_policy(5), cfg));
    CHECK(fit.converged);
    CHECK(fit.iterations_run <= EmConfig{}.max_iterations);
    CHECK(static_cast<std::size_t>(fit.iterations_run) == fit.diagnostics.loglik_trace.size());
}
