#include <doctest.h>

#include <cmath>

#include "erar/exact.hpp"
#include "erar/mdp.hpp"
#include "test_support.hpp"

using namespace erar;

namespace {
constexpr double kLse01 = 0.62011450695827752; // log((1+e)/2)
constexpr double kSig1 = 0.73105857863000488;  // e/(1+e)
} // namespace

TEST_CASE("soft_state_value basics") {
    DifferentialValue dv;
    dv.num_states = 1;
    dv.num_actions = 2;
    dv.q = {0.0, 1.0};
    const TabularPolicy uniform = TabularPolicy::uniform(1, 2);

    SUBCASE("zero Q at the prior gives zero") {
        dv.q = {0.0, 0.0};
        CHECK(soft_state_value(dv, uniform, uniform, 1.7, 0) ==
              doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("plain expectation when policy equals prior") {
        CHECK(soft_state_value(dv, uniform, uniform, 3.0, 0) ==
              doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("Boltzmann policy attains the log-sum-exp") {
        TabularPolicy boltzmann;
        boltzmann.num_states = 1;
        boltzmann.num_actions = 2;
        boltzmann.probs = {1.0 - kSig1, kSig1};
        CHECK(soft_state_value(dv, boltzmann, uniform, 1.0, 0) ==
              doctest::Approx(kLse01).epsilon(1e-12));
    }
}

TEST_CASE("soft_policy_evaluation on closed-form fixtures") {
    SUBCASE("constant stream has zero differential value") {
        const TabularMdp m = test::one_state_mdp({0.3});
        const auto [dv, rep] = soft_policy_evaluation(m, m.prior(), 1.0);
        CHECK(dv.theta == doctest::Approx(0.3).epsilon(1e-14));
        CHECK(dv.q[0] == 0.0);
        CHECK(rep.converged);
    }
    SUBCASE("Boltzmann-optimal policy on the two-arm fixture") {
        const TabularMdp m = test::one_state_mdp({0.0, 1.0});
        TabularPolicy pi;
        pi.num_states = 1;
        pi.num_actions = 2;
        pi.probs = {1.0 - kSig1, kSig1};
        const auto [dv, rep] = soft_policy_evaluation(m, pi, 1.0);
        CHECK(dv.theta == doctest::Approx(kLse01).epsilon(1e-12));
        CHECK(dv.q[0] == 0.0); // anchored
        CHECK(dv.q[1] == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("zero rewards at the prior evaluate to the zero fixed point") {
        const TabularMdp m = make_random_mdp(5, 6, 3, 0.2);
        std::vector<SparseRow> rows;
        for (int s = 0; s < 6; ++s)
            for (int a = 0; a < 3; ++a) rows.push_back(m.base_row(s, a));
        const TabularMdp zero(6, 3, std::move(rows), m.mixing(), std::vector<double>(18, 0.0),
                              m.prior());
        const auto [dv, rep] = soft_policy_evaluation(zero, zero.prior(), 2.0);
        CHECK(std::abs(dv.theta) < 1e-14);
        for (double q : dv.q) CHECK(std::abs(q) < 1e-10);
    }
}

TEST_CASE("soft_policy_evaluation meets its backup-residual contract") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TabularMdp m = make_random_mdp(seed, 7, 3, 0.1);
        const TabularPolicy pi = make_random_policy(seed + 7, 7, 3);
        const double tol = 1e-10;
        const auto [dv, rep] = soft_policy_evaluation(m, pi, 1.0, tol);
        CHECK(rep.converged);
        CHECK(rep.final_residual < 10.0 * tol);
        CHECK(dv.q[dv.anchor.state * 3 + dv.anchor.action] == 0.0);
    }
}

TEST_CASE("soft_policy_improvement closed forms and invariances") {
    DifferentialValue dv;
    dv.num_states = 1;
    dv.num_actions = 2;
    const TabularPolicy uniform = TabularPolicy::uniform(1, 2);

    SUBCASE("constant energy returns the prior") {
        dv.q = {0.7, 0.7};
        const TabularPolicy out = soft_policy_improvement(dv, uniform, 2.5);
        CHECK(out(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("two-term softmax by hand") {
        dv.q = {0.0, 1.0};
        const TabularPolicy out = soft_policy_improvement(dv, uniform, 1.0);
        CHECK(out(0, 0) == doctest::Approx(1.0 - kSig1).epsilon(1e-12));
        CHECK(out(0, 1) == doctest::Approx(kSig1).epsilon(1e-12));
    }
    SUBCASE("shift invariance") {
        const TabularMdp m = make_random_mdp(31, 5, 4, 0.1);
        auto [dv5, rep] = soft_policy_evaluation(m, make_random_policy(3, 5, 4), 2.0);
        const TabularPolicy a = soft_policy_improvement(dv5, m.prior(), 2.0);
        for (double& q : dv5.q) q += 17.25;
        const TabularPolicy b = soft_policy_improvement(dv5, m.prior(), 2.0);
        CHECK(a.max_diff(b) < 1e-12);
    }
    SUBCASE("rows are normalized even for extreme beta") {
        dv.q = {-3.0, 2.0};
        const TabularPolicy out = soft_policy_improvement(dv, uniform, 1000.0);
        CHECK(std::abs(out(0, 0) + out(0, 1) - 1.0) < 1e-12);
        CHECK(out(0, 1) > 1.0 - 1e-12);
    }
}

TEST_CASE("soft_policy_iteration solves the two-arm fixture exactly") {
    const TabularMdp m = test::one_state_mdp({0.0, 1.0});
    const auto res = soft_policy_iteration(m, 1.0);
    CHECK(res.value.theta == doctest::Approx(kLse01).epsilon(1e-10));
    CHECK(res.policy(0, 1) == doctest::Approx(kSig1).epsilon(1e-10));
    CHECK(res.report.converged);

    SUBCASE("zero rewards: nothing to optimize") {
        const TabularMdp z = test::one_state_mdp({0.0, 0.0});
        const auto r0 = soft_policy_iteration(z, 1.0);
        CHECK(std::abs(r0.value.theta) < 1e-14);
        CHECK(r0.policy(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("large beta approaches the greedy optimum monotonically") {
        double prev_theta = -1e300, prev_p1 = 0.0;
        for (double beta : {1.0, 10.0, 100.0, 1000.0}) {
            const auto r = soft_policy_iteration(m, beta);
            CHECK(r.value.theta >= prev_theta - 1e-12);
            CHECK(r.policy(0, 1) >= prev_p1 - 1e-12);
            prev_theta = r.value.theta;
            prev_p1 = r.policy(0, 1);
        }
        CHECK(prev_theta > 0.99);
        CHECK(prev_p1 > 0.99);
    }
}

TEST_CASE("theta history is non-decreasing along policy iteration") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TabularMdp m = make_random_mdp(seed, 8, 3, 0.1);
        const auto res = soft_policy_iteration(m, 2.0, 1e-9);
        for (std::size_t i = 1; i < res.report.theta_history.size(); ++i)
            CHECK(res.report.theta_history[i] >= res.report.theta_history[i - 1] - 1e-8);
    }
}

TEST_CASE("rate_gap identity") {
    SUBCASE("pi' = pi gives zero") {
        const TabularMdp m = make_random_mdp(2, 5, 3, 0.1);
        const TabularPolicy pi = make_random_policy(40, 5, 3);
        const auto [dv, rep] = soft_policy_evaluation(m, pi, 1.0, 1e-12);
        CHECK(std::abs(rate_gap_rhs(m, pi, pi, dv, 1.0)) < 1e-10);
    }
    SUBCASE("matches the computed theta gap for arbitrary pairs") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const TabularMdp m = make_random_mdp(seed, 5, 3, 0.1);
            const TabularPolicy pi = make_random_policy(seed + 1, 5, 3);
            const TabularPolicy pi2 = make_random_policy(seed + 2, 5, 3);
            const auto [dv, rep] = soft_policy_evaluation(m, pi, 1.0, 1e-12);
            const double lhs = reward_rate(m, pi2, 1.0, true) - dv.theta;
            CHECK(std::abs(lhs - rate_gap_rhs(m, pi, pi2, dv, 1.0)) < 1e-8);
        }
    }
    SUBCASE("improvement direction is nonnegative") {
        const TabularMdp m = make_random_mdp(4, 6, 3, 0.1);
        const TabularPolicy pi = make_random_policy(41, 6, 3);
        const auto [dv, rep] = soft_policy_evaluation(m, pi, 1.0, 1e-12);
        const TabularPolicy imp = soft_policy_improvement(dv, m.prior(), 1.0);
        CHECK(rate_gap_rhs(m, pi, imp, dv, 1.0) >= -1e-10);
    }
}

TEST_CASE("variational formula: log-sum-exp dominates every policy value") {
    const TabularMdp m = make_random_mdp(9, 5, 3, 0.1);
    const TabularPolicy pi = make_random_policy(90, 5, 3);
    const auto [dv, rep] = soft_policy_evaluation(m, pi, 2.0, 1e-12);
    const double beta = 2.0;
    for (int s = 0; s < 5; ++s) {
        double mx = -1e300;
        for (int a = 0; a < 3; ++a) mx = std::max(mx, beta * dv.q_at(s, a));
        double z = 0.0;
        for (int a = 0; a < 3; ++a) z += m.prior()(s, a) * std::exp(beta * dv.q_at(s, a) - mx);
        const double lse = (mx + std::log(z)) / beta;
        // Any policy's soft value is below, with equality at the Boltzmann.
        for (std::uint64_t pseed = 0; pseed < 5; ++pseed) {
            const TabularPolicy probe = make_random_policy(pseed, 5, 3);
            CHECK(soft_state_value(dv, probe, m.prior(), beta, s) <= lse + 1e-12);
        }
        const TabularPolicy boltz = soft_policy_improvement(dv, m.prior(), beta);
        CHECK(soft_state_value(dv, boltz, m.prior(), beta, s) ==
              doctest::Approx(lse).epsilon(1e-10));
    }
}

TEST_CASE("reward shift moves theta and leaves policy and centered Q alone") {
    const TabularMdp m = make_random_mdp(13, 5, 3, 0.1);
    std::vector<double> shifted(m.rewards().begin(), m.rewards().end());
    for (double& r : shifted) r += 2.5;
    std::vector<SparseRow> rows;
    for (int s = 0; s < 5; ++s)
        for (int a = 0; a < 3; ++a) rows.push_back(m.base_row(s, a));
    const TabularMdp m2(5, 3, std::move(rows), m.mixing(), std::move(shifted), m.prior());

    const auto a = soft_policy_iteration(m, 1.0, 1e-10, 10000, 1e-12);
    const auto b = soft_policy_iteration(m2, 1.0, 1e-10, 10000, 1e-12);
    CHECK(std::abs(b.value.theta - a.value.theta - 2.5) < 1e-10);
    CHECK(a.policy.max_diff(b.policy) < 1e-10);
    CHECK(centered_q_distance(a.value.q, b.value.q, 3) < 1e-10);
}

TEST_CASE("discounted_soft_q") {
    SUBCASE("gamma = 0 returns the rewards") {
        const TabularMdp m = make_random_mdp(17, 4, 3, 0.1);
        const auto q = discounted_soft_q(m, 1.0, 0.0, 1e-12);
        for (int s = 0; s < 4; ++s)
            for (int a = 0; a < 3; ++a)
                CHECK(q[s * 3 + a] == doctest::Approx(m.reward(s, a)).epsilon(1e-12));
    }
    SUBCASE("single-state bulk term is exact at every gamma") {
        const TabularMdp m = test::one_state_mdp({0.0, 1.0});
        for (double gamma : {0.5, 0.9, 0.99}) {
            const auto q = discounted_soft_q(m, 1.0, gamma, 1e-13);
            const double vsoft = std::log(0.5 * (std::exp(q[0]) + std::exp(q[1])));
            CHECK((1.0 - gamma) * vsoft == doctest::Approx(kLse01).epsilon(1e-9));
        }
    }
    SUBCASE("gamma -> 1 approaches the differential solution") {
        const TabularMdp m = make_random_mdp(23, 5, 3, 0.1);
        const auto exact = soft_policy_iteration(m, 1.0, 1e-10, 10000, 1e-12);
        const auto q = discounted_soft_q(m, 1.0, 0.9999, 1e-11);
        CHECK(centered_q_distance(q, exact.value.q, 3) < 1e-2);
        double mx = -1e300;
        for (int a = 0; a < 3; ++a) mx = std::max(mx, q[a]);
        double z = 0.0;
        for (int a = 0; a < 3; ++a) z += m.prior()(0, a) * std::exp(q[a] - mx);
        CHECK(std::abs(1e-4 * (mx + std::log(z)) - exact.value.theta) < 1e-3);
    }
}

TEST_CASE("beta -> 0 improvement collapses to the prior") {
    const TabularMdp m = make_random_mdp(29, 5, 3, 0.1);
    const auto res = soft_policy_iteration(m, 1e-4, 1e-10, 10000, 1e-12);
    CHECK(res.policy.max_diff(m.prior()) < 1e-3);
}

TEST_CASE("verify_theorems sweeps cleanly and catches injected bugs") {
    VerifyOptions opt;
    opt.num_mdps = 20;
    opt.seed = 5;
    opt.sizes = {{5, 3}, {3, 2}};
    opt.inv_temperature = 1.0;

    const VerifyReport clean = verify_theorems(opt);
    CHECK(clean.all_pass);
    CHECK(clean.mdps_checked == 20);
    for (const CheckResult& c : clean.checks) CHECK(c.violations == 0);

    SUBCASE("degenerate single-state sweep passes trivially") {
        VerifyOptions tiny = opt;
        tiny.num_mdps = 1;
        tiny.sizes = {{1, 1}};
        CHECK(verify_theorems(tiny).all_pass);
    }
    SUBCASE("perturbed pi' produces expected monotonicity violations") {
        VerifyOptions bug = opt;
        bug.perturb_pi_prime = 0.1;
        const VerifyReport r = verify_theorems(bug);
        CHECK_FALSE(r.all_pass);
        long mono_violations = 0;
        for (const CheckResult& c : r.checks) {
            if (c.name == "improvement_monotone" || c.name == "improvement_strict") {
                CHECK(c.expected_failure);
                mono_violations += c.violations;
                if (c.violations > 0) CHECK_FALSE(c.failing_seeds.empty());
            } else {
                // The rate-gap identity holds for arbitrary pairs, perturbed or not.
                if (c.name.rfind("rate_gap", 0) == 0) CHECK(c.violations == 0);
            }
        }
        CHECK(mono_violations > 0);
    }
}

TEST_CASE("evaluation failure carries the report") {
    // Periodic unichain: the backup iteration oscillates and must raise.
    std::vector<SparseRow> rows = {{{1}, {1.0}}, {{0}, {1.0}}};
    const TabularMdp cyc(2, 1, std::move(rows), 0.0, {1.0, 0.0}, TabularPolicy::uniform(2, 1));
    try {
        soft_policy_evaluation(cyc, cyc.prior(), 1.0, 1e-12, 50);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.report.iterations == 50);
        CHECK_FALSE(e.report.converged);
    }
}
