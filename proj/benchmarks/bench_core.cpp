#include <benchmark/benchmark.h>

#include "erar/asac.hpp"
#include "erar/envs.hpp"
#include "erar/exact.hpp"
#include "erar/mdp.hpp"
#include "erar/nn.hpp"

using namespace erar;

namespace {

void BM_StationaryDistribution(benchmark::State& state) {
    const int S = static_cast<int>(state.range(0));
    const TabularMdp mdp = make_random_mdp(1, S, 3, 0.1);
    const TabularPolicy pi = make_random_policy(2, S, 3);
    for (auto _ : state) {
        auto d = stationary_distribution(mdp, pi);
        benchmark::DoNotOptimize(d);
    }
}
BENCHMARK(BM_StationaryDistribution)->Arg(5)->Arg(20)->Arg(100);

void BM_SoftPolicyEvaluation(benchmark::State& state) {
    const int S = static_cast<int>(state.range(0));
    const TabularMdp mdp = make_random_mdp(3, S, 3, 0.1);
    const TabularPolicy pi = make_random_policy(4, S, 3);
    for (auto _ : state) {
        auto r = soft_policy_evaluation(mdp, pi, 1.0, 1e-10, 1000000);
        benchmark::DoNotOptimize(r);
    }
}
BENCHMARK(BM_SoftPolicyEvaluation)->Arg(5)->Arg(20)->Arg(100);

void BM_SoftPolicyIteration(benchmark::State& state) {
    const int S = static_cast<int>(state.range(0));
    const TabularMdp mdp = make_random_mdp(5, S, 3, 0.1);
    for (auto _ : state) {
        auto r = soft_policy_iteration(mdp, 1.0, 1e-9, 10000, 1e-10, 1000000);
        benchmark::DoNotOptimize(r);
    }
}
BENCHMARK(BM_SoftPolicyIteration)->Arg(5)->Arg(20);

void BM_MlpForwardBatch(benchmark::State& state) {
    Rng rng(1);
    const Mlp net = Mlp::random_init({4, 64, 64, 1}, rng);
    Eigen::MatrixXd x(4, state.range(0));
    x.setRandom();
    Mlp::Cache cache;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward_batch(x, cache));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBatch)->Arg(1)->Arg(256);

void BM_MlpBackwardBatch(benchmark::State& state) {
    Rng rng(2);
    const Mlp net = Mlp::random_init({4, 64, 64, 1}, rng);
    Eigen::MatrixXd x(4, state.range(0)), og(1, state.range(0));
    x.setRandom();
    og.setRandom();
    Mlp::Cache cache;
    net.forward_batch(x, cache);
    Mlp::AlignedVector grad(net.params().size(), 0.0);
    for (auto _ : state) benchmark::DoNotOptimize(net.backward_batch(cache, og, grad));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpBackwardBatch)->Arg(256);

void BM_PendulumStep(benchmark::State& state) {
    PendulumEnv env;
    env.reset(0);
    const std::vector<double> action{0.3};
    for (auto _ : state) benchmark::DoNotOptimize(env.step(action));
}
BENCHMARK(BM_PendulumStep);

void BM_TrainerGradientStep(benchmark::State& state) {
    TrainerConfig cfg;
    cfg.env = "pendulum";
    cfg.total_steps = 0;
    cfg.learning_starts = 0;
    cfg.seed = 1;
    Trainer tr(make_env(cfg.env), cfg);
    auto env = make_env(cfg.env);
    auto obs = env->reset(1);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> a{rng.uniform(-1.0, 1.0)};
        auto sr = env->step(a);
        tr.mutable_state().buffer.push({obs, a, sr.reward, sr.obs, sr.terminated});
        obs = sr.obs;
    }
    for (auto _ : state) {
        auto batch = tr.sample_batch();
        tr.update_reset_penalty(batch);
        auto targets = tr.critic_target(batch);
        tr.critic_update(batch, targets);
        tr.actor_update(batch);
        tr.theta_update(batch);
        tr.polyak_targets();
    }
}
BENCHMARK(BM_TrainerGradientStep);

} // namespace

BENCHMARK_MAIN();
