#include <doctest.h>

#include <cmath>
#include <map>

#include "erar/envs.hpp"
#include "erar/exact.hpp"
#include "erar/mdp.hpp"

using namespace erar;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("action binning") {
    CHECK(bin_action(-0.99, 2) == 0);
    CHECK(bin_action(0.99, 2) == 1);
    CHECK(bin_action(-1.0, 4) == 0);
    CHECK(bin_action(1.0, 4) == 3);
    // decode(encode) is the identity on discrete actions
    for (int bins : {2, 3, 8}) {
        for (int k = 0; k < bins; ++k) CHECK(bin_action(bin_center(k, bins), bins) == k);
    }
}

TEST_CASE("tabular embedded env") {
    auto env = make_env("random_tabular:7:5:3");
    auto* tab = dynamic_cast<TabularEmbeddedEnv*>(env.get());
    REQUIRE(tab != nullptr);
    CHECK(env->spec().obs_dim == 5);
    CHECK(env->spec().discrete_actions == 3);
    CHECK_FALSE(env->spec().has_termination);

    SUBCASE("reset is a one-hot point mass on state 0 and deterministic in the seed") {
        const auto obs1 = env->reset(9);
        CHECK(obs1[0] == 1.0);
        for (int i = 1; i < 5; ++i) CHECK(obs1[i] == 0.0);
        auto env2 = make_env("random_tabular:7:5:3");
        const auto obs2 = env2->reset(9);
        CHECK(obs1 == obs2);
        std::vector<double> a{0.3};
        const auto s1 = env->step(a);
        const auto s2 = env2->step(a);
        CHECK(s1.obs == s2.obs);
        CHECK(s1.reward == s2.reward);
    }
    SUBCASE("2-state cycle embedding steps deterministically") {
        std::vector<SparseRow> rows = {{{1}, {1.0}}, {{1}, {1.0}}, {{0}, {1.0}}, {{0}, {1.0}}};
        TabularMdp cyc(2, 2, std::move(rows), 0.0, {0, 0, 0, 0}, TabularPolicy::uniform(2, 2));
        TabularEmbeddedEnv e(std::move(cyc));
        e.reset(0);
        const auto r1 = e.step(std::vector<double>{-0.5});
        CHECK(r1.obs[1] == 1.0);
        const auto r2 = e.step(std::vector<double>{0.5});
        CHECK(r2.obs[0] == 1.0);
        CHECK_FALSE(r2.terminated);
    }
    SUBCASE("out-of-bounds actions are clipped and flagged") {
        env->reset(1);
        const auto r = env->step(std::vector<double>{3.0});
        CHECK(r.action_clipped);
    }
}

TEST_CASE("tabular embedding matches the inner chain statistically") {
    auto env = make_env("random_tabular:3:3:2");
    auto* tab = dynamic_cast<TabularEmbeddedEnv*>(env.get());
    const TabularMdp& mdp = tab->mdp();
    env->reset(4);

    // Fixed behavior: always the continuous action mapping to bin 1.
    const std::vector<double> action{bin_center(1, 2)};
    std::map<std::pair<int, int>, long> counts;
    int s = 0;
    const long steps = 1000000;
    for (long t = 0; t < steps; ++t) {
        const auto r = env->step(action);
        int next = 0;
        for (int i = 0; i < 3; ++i)
            if (r.obs[i] == 1.0) next = i;
        counts[{s, next}]++;
        CHECK(r.reward == mdp.reward(s, 1));
        s = next;
    }
    std::map<int, long> visits;
    for (const auto& [key, n] : counts) visits[key.first] += n;
    for (const auto& [key, n] : counts) {
        const double empirical = static_cast<double>(n) / visits[key.first];
        CHECK(std::abs(empirical - mdp.transition(key.first, 1, key.second)) < 5e-3);
    }
}

TEST_CASE("pendulum") {
    PendulumEnv env;
    SUBCASE("upright rest is an equilibrium with zero reward") {
        env.reset(0);
        env.set_state(0.0, 0.0);
        const auto r = env.step(std::vector<double>{0.0});
        CHECK(r.reward == 0.0);
        CHECK(env.angle() == 0.0);
        CHECK(env.velocity() == 0.0);
        CHECK_FALSE(r.terminated);
    }
    SUBCASE("reset draws the angle uniformly with zero velocity") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto obs = env.reset(seed);
            CHECK(env.velocity() == 0.0);
            CHECK(env.angle() > -kPi);
            CHECK(env.angle() <= kPi);
            CHECK(obs[0] == doctest::Approx(std::cos(env.angle())));
            CHECK(obs[1] == doctest::Approx(std::sin(env.angle())));
        }
        const auto a = env.reset(7);
        const auto b = env.reset(7);
        CHECK(a == b);
    }
    SUBCASE("energy drift under zero torque stays below 5% over 1000 steps") {
        env.reset(0);
        env.set_state(kPi - 0.3, 0.0); // small oscillation about the bottom
        const double e0 = env.energy();
        double max_step_change = 0.0, prev = e0;
        for (int t = 0; t < 1000; ++t) {
            env.step(std::vector<double>{0.0});
            max_step_change = std::max(max_step_change, std::abs(env.energy() - prev));
            prev = env.energy();
        }
        CHECK(std::abs(env.energy() - e0) < 0.05 * std::abs(e0));
        CHECK(max_step_change < 0.05 * std::abs(e0)); // per-step error is O(dt^2)
    }
    SUBCASE("never terminates, clips wild torques") {
        env.reset(3);
        for (int t = 0; t < 100; ++t) {
            const auto r = env.step(std::vector<double>{t % 2 ? 5.0 : -5.0});
            CHECK_FALSE(r.terminated);
            CHECK(r.action_clipped);
            CHECK(std::abs(env.velocity()) <= env.params().max_speed);
        }
    }
}

TEST_CASE("point mass") {
    PointMassEnv env;
    SUBCASE("at the origin with zero action: zero reward, alive") {
        env.reset(0);
        env.load_state({"0", "0", Rng(0).save_state()});
        const auto r = env.step(std::vector<double>{0.0, 0.0});
        CHECK(r.reward == 0.0);
        CHECK_FALSE(r.terminated);
    }
    SUBCASE("termination is exactly the box condition") {
        env.reset(0);
        env.load_state({"0.95", "0", Rng(0).save_state()});
        auto r = env.step(std::vector<double>{1.0, 0.0}); // 1.05 > 1
        CHECK(r.terminated);
        env.load_state({"0.85", "0", Rng(0).save_state()});
        r = env.step(std::vector<double>{1.0, 0.0}); // 0.95 <= 1
        CHECK_FALSE(r.terminated);
    }
    SUBCASE("reset is inside the half-box") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto obs = env.reset(seed);
            CHECK(std::abs(obs[0]) <= 0.5);
            CHECK(std::abs(obs[1]) <= 0.5);
        }
    }
}

TEST_CASE("env clones evolve identically") {
    for (const char* name : {"pendulum", "pointmass", "ring", "random_tabular:1:4:2"}) {
        auto env = make_env(name);
        env->reset(11);
        std::vector<double> action(env->spec().action_dim, 0.25);
        env->step(action);
        auto twin = env->clone();
        for (int t = 0; t < 50; ++t) {
            const auto a = env->step(action);
            const auto b = twin->step(action);
            CHECK(a.obs == b.obs);
            CHECK(a.reward == b.reward);
            CHECK(a.terminated == b.terminated);
            if (a.terminated) {
                env->reset(t);
                twin->reset(t);
            }
        }
    }
}

TEST_CASE("env state save/load round-trips") {
    for (const char* name : {"pendulum", "pointmass", "random_tabular:5:3:2"}) {
        auto env = make_env(name);
        env->reset(2);
        std::vector<double> action(env->spec().action_dim, -0.4);
        for (int t = 0; t < 10; ++t) env->step(action);
        const auto saved = env->save_state();
        const auto a = env->step(action);
        auto env2 = make_env(name);
        env2->reset(99);
        env2->load_state(saved);
        const auto b = env2->step(action);
        CHECK(a.obs == b.obs);
        CHECK(a.reward == b.reward);
    }
}

TEST_CASE("make_env rejects unknown names") {
    CHECK_THROWS_AS(make_env("mountain_car"), std::invalid_argument);
    CHECK_THROWS_AS(make_env("random_tabular:1:2"), std::invalid_argument);
}

TEST_CASE("ring mdp structure") {
    const TabularMdp ring = make_ring_mdp(5);
    CHECK(ring.num_states() == 5);
    CHECK(ring.num_actions() == 2);
    CHECK(ring.reward(0, 0) == 1.0);
    CHECK(ring.transition(0, 0, 1) == doctest::Approx(0.9));
    CHECK(ring.transition(0, 0, 0) == doctest::Approx(0.1));
    // Circulating clockwise is optimal and the exact solver agrees.
    const auto res = soft_policy_iteration(ring, 5.0);
    CHECK(res.value.theta > 0.1);
    CHECK(res.policy(0, 0) > 0.5);
}

TEST_CASE("discretized pendulum") {
    SUBCASE("transitions land on grid points and the MDP validates") {
        const TabularMdp grid = discretize_pendulum(8, 8, 8, 1e-4);
        CHECK(grid.num_states() == 64);
        CHECK(grid.num_actions() == 8);
        for (int s = 0; s < grid.num_states(); ++s)
            for (int a = 0; a < 8; ++a) CHECK(grid.base_row(s, a).idx.size() == 1);
    }
    SUBCASE("grids below 8 are rejected") {
        CHECK_THROWS_AS(discretize_pendulum(4, 8, 8), std::invalid_argument);
    }
    SUBCASE("refining the grid changes theta* by a decreasing amount") {
        const double beta = 5.0;
        const double t8 = soft_policy_iteration(discretize_pendulum(8, 8, 8), beta, 1e-6, 10000,
                                                1e-8, 2000000)
                              .value.theta;
        const double t16 = soft_policy_iteration(discretize_pendulum(16, 16, 8), beta, 1e-6,
                                                 10000, 1e-8, 2000000)
                               .value.theta;
        const double t24 = soft_policy_iteration(discretize_pendulum(24, 24, 8), beta, 1e-6,
                                                 10000, 1e-8, 2000000)
                               .value.theta;
        CHECK(std::abs(t24 - t16) < std::abs(t16 - t8));
    }
    SUBCASE("zero-gravity torque-only cost approaches zero from below as beta grows") {
        PendulumParams p;
        p.gravity = 0.0;
        p.angle_cost = 0.0;
        p.vel_cost = 0.0;
        p.torque_cost = 1.0;
        double prev = -1e300;
        for (double beta : {1.0, 5.0, 25.0, 125.0}) {
            const TabularMdp grid = discretize_pendulum(8, 8, 8, 1e-4, p);
            const double theta = soft_policy_iteration(grid, beta, 1e-8, 10000, 1e-10, 2000000)
                                     .value.theta;
            CHECK(theta < 0.0);
            CHECK(theta >= prev - 1e-12);
            prev = theta;
        }
        // Greedy limit: smallest torque bin center is 2/8, cost -(2/8)^2.
        CHECK(prev > -0.09);
    }
}
