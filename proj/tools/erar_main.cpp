// erar: exact entropy-regularized average-reward solvers and the ASAC trainer.
//
// Exit codes: 0 success, 1 bad input, 2 solver did not converge,
// 3 verification found violations, 4 numeric failure during training.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "erar/asac.hpp"
#include "erar/envs.hpp"
#include "erar/errors.hpp"
#include "erar/exact.hpp"
#include "erar/io.hpp"
#include "erar/mdp.hpp"

namespace {

using namespace erar;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNoConvergence = 2;
constexpr int kExitVerification = 3;
constexpr int kExitNumeric = 4;

long wall_ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 t0)
        .count();
}

std::uint64_t default_seed() {
    if (const char* s = std::getenv("ERAR_SEED")) return std::strtoull(s, nullptr, 10);
    return 0;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

/// MDP sources accepted by solve/verify/gamma-sweep:
///   ring[:<S>] | random_tabular:<seed>:<S>:<A> | pendulum_grid:<gt>:<gv>:<gu>[:<mixing>]
TabularMdp mdp_from_generator(const std::string& name) {
    const auto parts = split(name, ':');
    if (parts[0] == "ring") return make_ring_mdp(parts.size() > 1 ? std::stoi(parts[1]) : 5);
    if (parts[0] == "random_tabular") {
        if (parts.size() != 4)
            throw std::invalid_argument("expected random_tabular:<seed>:<S>:<A>");
        return make_random_mdp(std::stoull(parts[1]), std::stoi(parts[2]), std::stoi(parts[3]),
                               0.1);
    }
    if (parts[0] == "pendulum_grid") {
        if (parts.size() != 4 && parts.size() != 5)
            throw std::invalid_argument("expected pendulum_grid:<gt>:<gv>:<gu>[:<mixing>]");
        const double mixing = parts.size() == 5 ? std::stod(parts[4]) : 1e-4;
        return discretize_pendulum(std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3]),
                                   mixing);
    }
    throw std::invalid_argument("unknown MDP generator '" + name + "'");
}

TabularMdp resolve_mdp(const std::string& env_name, const std::string& mdp_file) {
    if (!mdp_file.empty()) return load_mdp_file(mdp_file);
    if (!env_name.empty()) return mdp_from_generator(env_name);
    throw std::invalid_argument("provide an MDP via --env or --mdp");
}

std::string join_path(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

struct SolveArgs {
    std::string env, mdp_file, outdir = ".";
    double beta = 1.0, tol = 1e-9, eval_tol = 1e-10;
    int max_rounds = 10000;
    long eval_max_iters = 1000000;
    int anchor_state = 0, anchor_action = 0;
};

int run_solve(const SolveArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const TabularMdp mdp = resolve_mdp(a.env, a.mdp_file);
    std::filesystem::create_directories(a.outdir);
    const std::string out_path = join_path(a.outdir, "solution.json");

    PolicyIterationResult result;
    try {
        result = soft_policy_iteration(mdp, a.beta, a.tol, a.max_rounds, a.eval_tol,
                                       a.eval_max_iters, {a.anchor_state, a.anchor_action});
    } catch (const ConvergenceError& e) {
        std::fprintf(stderr, "solve: %s (iterations=%ld, residual=%.3e)\n", e.what(),
                     e.report.iterations, e.report.final_residual);
        return kExitNoConvergence;
    }
    std::printf("theta* = %.9f\n", result.value.theta);
    atomic_write_file(out_path, solve_result_to_json_string(result, a.beta) + "\n");

    RunManifest manifest;
    manifest.command = "solve";
    std::ostringstream cfg;
    cfg << "{\"env\": \"" << a.env << "\", \"mdp\": \"" << a.mdp_file << "\", \"beta\": " << a.beta
        << ", \"tol\": " << a.tol << ", \"eval_tol\": " << a.eval_tol << "}";
    manifest.config_json = cfg.str();
    manifest.artifacts = {{"solution", out_path}};
    manifest.wall_ms = wall_ms_since(t0);
    write_manifest(manifest, join_path(a.outdir, "run_manifest.json"));
    return kExitOk;
}

struct VerifyArgs {
    int mdps = 100;
    double beta = 1.0;
    std::string sizes = "5x3,20x4";
    std::uint64_t seed = default_seed();
    double perturb = 0.0;
    double mixing = 0.1;
    std::string outdir = ".";
};

int run_verify(const VerifyArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    VerifyOptions opt;
    opt.num_mdps = a.mdps;
    opt.inv_temperature = a.beta;
    opt.seed = a.seed;
    opt.perturb_pi_prime = a.perturb;
    opt.mixing = a.mixing;
    opt.sizes.clear();
    for (const std::string& part : split(a.sizes, ',')) {
        const auto dims = split(part, 'x');
        if (dims.size() != 2) throw std::invalid_argument("sizes: expected SxA pairs");
        opt.sizes.emplace_back(std::stoi(dims[0]), std::stoi(dims[1]));
    }

    const VerifyReport report = verify_theorems(opt);
    for (const CheckResult& c : report.checks) {
        std::printf("%-24s violations=%ld worst=%+.3e threshold=%.0e%s\n", c.name.c_str(),
                    c.violations, c.worst, c.threshold,
                    c.expected_failure ? " (expected-failure mode)" : "");
    }
    std::printf("mdps=%d all_pass=%s\n", report.mdps_checked, report.all_pass ? "true" : "false");

    std::filesystem::create_directories(a.outdir);
    const std::string report_path = join_path(a.outdir, "verify_report.json");
    atomic_write_file(report_path, verify_report_to_json_string(report) + "\n");

    RunManifest manifest;
    manifest.command = "verify";
    std::ostringstream cfg;
    cfg << "{\"mdps\": " << a.mdps << ", \"beta\": " << a.beta << ", \"sizes\": \"" << a.sizes
        << "\", \"seed\": " << a.seed << ", \"perturb_pi_prime\": " << a.perturb << "}";
    manifest.config_json = cfg.str();
    manifest.seed = a.seed;
    manifest.artifacts = {{"report", report_path}};
    manifest.wall_ms = wall_ms_since(t0);
    write_manifest(manifest, join_path(a.outdir, "run_manifest.json"));
    return report.all_pass ? kExitOk : kExitVerification;
}

int run_train(const TrainerConfig& cfg, const std::string& outdir, const std::string& resume) {
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(outdir);
    const std::string log_path = join_path(outdir, "train_log.csv");
    const std::string ckpt_path = join_path(outdir, "checkpoint.json");

    Trainer trainer = resume.empty() ? Trainer(make_env(cfg.env), cfg)
                                     : Trainer::load_checkpoint(resume);
    if (!resume.empty() && cfg.total_steps > 0) trainer.set_total_steps(cfg.total_steps);
    std::ostringstream csv;
    int exit_code = kExitOk;
    try {
        trainer.train(&csv);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "train: %s (aborting at step %ld; checkpoint retained)\n", e.what(),
                     trainer.state().env_steps);
        exit_code = kExitNumeric;
    }
    atomic_write_file(log_path, csv.str());
    trainer.save_checkpoint(ckpt_path);
    std::printf("trained %ld steps; theta = %.6f\n", trainer.state().env_steps,
                trainer.state().theta);

    RunManifest manifest;
    manifest.command = "train";
    manifest.config_json = config_to_json_string(trainer.config());
    manifest.seed = cfg.seed;
    manifest.artifacts = {{"log", log_path}, {"checkpoint", ckpt_path}};
    manifest.wall_ms = wall_ms_since(t0);
    write_manifest(manifest, join_path(outdir, "run_manifest.json"));
    return exit_code;
}

struct EvalArgs {
    std::string checkpoint;
    int episodes = 10;
    long episode_len = 1000;
    std::uint64_t seed = default_seed();
    bool deterministic = false;
};

int run_eval(const EvalArgs& a) {
    Trainer trainer = Trainer::load_checkpoint(a.checkpoint);
    std::unique_ptr<Env> env = make_env(trainer.config().env);
    const EvalResult r = evaluate(trainer.state().actor, trainer.head(), *env, a.episodes,
                                  a.episode_len, a.seed, !a.deterministic);
    std::printf("return = %.6f +/- %.6f (stderr, %d episodes)\n", r.mean_return, r.stderr_return,
                r.episodes);
    std::printf("reward_rate = %.6f\n", r.mean_rate);
    std::printf("theta_learned = %.6f\n", trainer.state().theta);
    return kExitOk;
}

struct GammaSweepArgs {
    std::string env, mdp_file, outdir = ".";
    double beta = 1.0;
    std::string gammas = "0.9,0.99,0.999,0.9999";
    double tol = 1e-9;
};

int run_gamma_sweep(const GammaSweepArgs& a) {
    const auto t0 = std::chrono::steady_clock::now();
    const TabularMdp mdp = resolve_mdp(a.env, a.mdp_file);
    const auto exact = soft_policy_iteration(mdp, a.beta, 1e-10, 10000, 1e-12, 1000000);

    std::ostringstream csv;
    csv << "gamma,centered_q_dist,theta_scale_err\n";
    std::printf("theta* = %.9f\n", exact.value.theta);
    for (const std::string& g : split(a.gammas, ',')) {
        const double gamma = std::stod(g);
        const std::vector<double> qg = discounted_soft_q(mdp, a.beta, gamma, a.tol);
        const double dist = centered_q_distance(qg, exact.value.q, mdp.num_actions());
        // (1-gamma) V_soft at state 0 approaches theta* as gamma -> 1.
        double m = -1e300;
        for (int x = 0; x < mdp.num_actions(); ++x) m = std::max(m, a.beta * qg[x]);
        double z = 0.0;
        for (int x = 0; x < mdp.num_actions(); ++x)
            z += mdp.prior()(0, x) * std::exp(a.beta * qg[x] - m);
        const double vsoft0 = (m + std::log(z)) / a.beta;
        const double scale_err = std::abs((1.0 - gamma) * vsoft0 - exact.value.theta);
        char line[128];
        std::snprintf(line, sizeof line, "%.6g,%.9g,%.9g", gamma, dist, scale_err);
        csv << line << '\n';
        std::printf("gamma=%-8s centered_q_dist=%.3e theta_scale_err=%.3e\n", g.c_str(), dist,
                    scale_err);
    }

    std::filesystem::create_directories(a.outdir);
    const std::string csv_path = join_path(a.outdir, "gamma_sweep.csv");
    atomic_write_file(csv_path, csv.str());

    RunManifest manifest;
    manifest.command = "gamma-sweep";
    std::ostringstream cfg;
    cfg << "{\"env\": \"" << a.env << "\", \"mdp\": \"" << a.mdp_file << "\", \"beta\": " << a.beta
        << ", \"gammas\": \"" << a.gammas << "\"}";
    manifest.config_json = cfg.str();
    manifest.artifacts = {{"csv", csv_path}};
    manifest.wall_ms = wall_ms_since(t0);
    write_manifest(manifest, join_path(a.outdir, "run_manifest.json"));
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entropy-regularized average-reward RL: exact solvers and ASAC"};
    app.require_subcommand(1);

    SolveArgs solve_args;
    CLI::App* solve = app.add_subcommand("solve", "Soft policy iteration on a tabular MDP");
    solve->add_option("--env", solve_args.env,
                      "MDP generator (ring[:S] | random_tabular:seed:S:A | "
                      "pendulum_grid:gt:gv:gu[:mixing])");
    solve->add_option("--mdp", solve_args.mdp_file, "MDP JSON file");
    solve->add_option("--beta", solve_args.beta, "inverse temperature")->check(CLI::PositiveNumber);
    solve->add_option("--tol", solve_args.tol, "policy iteration tolerance");
    solve->add_option("--eval-tol", solve_args.eval_tol, "policy evaluation tolerance");
    solve->add_option("--max-rounds", solve_args.max_rounds);
    solve->add_option("--eval-max-iters", solve_args.eval_max_iters);
    solve->add_option("--anchor-state", solve_args.anchor_state);
    solve->add_option("--anchor-action", solve_args.anchor_action);
    solve->add_option("--outdir", solve_args.outdir, "output directory");

    VerifyArgs verify_args;
    CLI::App* verify = app.add_subcommand("verify", "Numerical verification of the ERAR theorems");
    verify->add_option("--mdps", verify_args.mdps, "number of random MDPs")
        ->check(CLI::PositiveNumber);
    verify->add_option("--beta", verify_args.beta)->check(CLI::PositiveNumber);
    verify->add_option("--sizes", verify_args.sizes, "comma-separated SxA pairs (e.g. 5x3,20x4)");
    verify->add_option("--seed", verify_args.seed);
    verify->add_option("--perturb-pi-prime", verify_args.perturb,
                       "bug-injection mode: mix this much uniform noise into pi'");
    verify->add_option("--mixing", verify_args.mixing);
    verify->add_option("--outdir", verify_args.outdir);

    TrainerConfig train_cfg;
    train_cfg.seed = default_seed();
    std::string train_config_file, train_outdir = ".", train_resume;
    std::string train_hidden;
    CLI::App* train = app.add_subcommand("train", "Run the ASAC training loop");
    train->add_option("--config", train_config_file, "JSON config file (flags override)");
    train->add_option("--resume", train_resume, "resume training from a checkpoint");
    train->add_option("--env", train_cfg.env,
                      "environment (ring[:S] | random_tabular:seed:S:A | pendulum | pointmass)");
    train->add_option("--steps", train_cfg.total_steps, "total environment steps");
    train->add_option("--seed", train_cfg.seed);
    train->add_option("--beta", train_cfg.inv_temperature);
    train->add_option("--lr-actor", train_cfg.lr_actor);
    train->add_option("--lr-critic", train_cfg.lr_critic);
    train->add_option("--lr-theta", train_cfg.lr_theta);
    train->add_option("--polyak", train_cfg.polyak);
    train->add_option("--batch-size", train_cfg.batch_size);
    train->add_option("--buffer-capacity", train_cfg.buffer_capacity);
    train->add_option("--reset-scale", train_cfg.reset_scale);
    train->add_option("--grad-clip", train_cfg.grad_clip);
    train->add_option("--eval-interval", train_cfg.eval_interval);
    train->add_option("--eval-episodes", train_cfg.eval_episodes);
    train->add_option("--eval-episode-len", train_cfg.eval_episode_len);
    train->add_option("--learning-starts", train_cfg.learning_starts);
    train->add_option("--prior", train_cfg.prior, "uniform | gaussian");
    train->add_option("--hidden", train_hidden, "comma-separated hidden sizes (e.g. 64,64)");
    train->add_flag("--penalty-all-rewards", train_cfg.penalty_all_rewards,
                    "average all batch rewards into the reset penalty (pseudocode variant)");
    train->add_option("--target-action-samples", train_cfg.target_action_samples);
    train->add_option("--outdir", train_outdir);

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a trained checkpoint");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--episodes", eval_args.episodes);
    eval_cmd->add_option("--episode-len", eval_args.episode_len);
    eval_cmd->add_option("--seed", eval_args.seed);
    eval_cmd->add_flag("--deterministic", eval_args.deterministic, "play tanh(mean), no sampling");

    GammaSweepArgs sweep_args;
    CLI::App* sweep = app.add_subcommand(
        "gamma-sweep", "Distance of discounted soft Q to the ERAR solution across gammas");
    sweep->add_option("--env", sweep_args.env, "MDP generator (see solve)");
    sweep->add_option("--mdp", sweep_args.mdp_file, "MDP JSON file");
    sweep->add_option("--beta", sweep_args.beta)->check(CLI::PositiveNumber);
    sweep->add_option("--gammas", sweep_args.gammas, "comma-separated discount factors");
    sweep->add_option("--tol", sweep_args.tol);
    sweep->add_option("--outdir", sweep_args.outdir);

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) return run_solve(solve_args);
        if (verify->parsed()) return run_verify(verify_args);
        if (train->parsed()) {
            TrainerConfig cfg = train_cfg;
            if (!train_config_file.empty()) {
                cfg = load_config_file(train_config_file);
                // Re-apply any flags given on the command line over the file.
                for (const CLI::Option* opt : train->get_options()) {
                    if (opt->count() == 0) continue;
                    const std::string name = opt->get_name();
                    if (name == "--env") cfg.env = train_cfg.env;
                    else if (name == "--steps") cfg.total_steps = train_cfg.total_steps;
                    else if (name == "--seed") cfg.seed = train_cfg.seed;
                    else if (name == "--beta") cfg.inv_temperature = train_cfg.inv_temperature;
                    else if (name == "--lr-actor") cfg.lr_actor = train_cfg.lr_actor;
                    else if (name == "--lr-critic") cfg.lr_critic = train_cfg.lr_critic;
                    else if (name == "--lr-theta") cfg.lr_theta = train_cfg.lr_theta;
                    else if (name == "--polyak") cfg.polyak = train_cfg.polyak;
                    else if (name == "--batch-size") cfg.batch_size = train_cfg.batch_size;
                    else if (name == "--buffer-capacity") cfg.buffer_capacity = train_cfg.buffer_capacity;
                    else if (name == "--reset-scale") cfg.reset_scale = train_cfg.reset_scale;
                    else if (name == "--grad-clip") cfg.grad_clip = train_cfg.grad_clip;
                    else if (name == "--eval-interval") cfg.eval_interval = train_cfg.eval_interval;
                    else if (name == "--eval-episodes") cfg.eval_episodes = train_cfg.eval_episodes;
                    else if (name == "--eval-episode-len") cfg.eval_episode_len = train_cfg.eval_episode_len;
                    else if (name == "--learning-starts") cfg.learning_starts = train_cfg.learning_starts;
                    else if (name == "--prior") cfg.prior = train_cfg.prior;
                    else if (name == "--penalty-all-rewards") cfg.penalty_all_rewards = train_cfg.penalty_all_rewards;
                    else if (name == "--target-action-samples") cfg.target_action_samples = train_cfg.target_action_samples;
                }
            }
            if (!train_hidden.empty()) {
                cfg.hidden.clear();
                for (const std::string& h : split(train_hidden, ','))
                    cfg.hidden.push_back(std::stoi(h));
            }
            return run_train(cfg, train_outdir, train_resume);
        }
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (sweep->parsed()) return run_gamma_sweep(sweep_args);
    } catch (const ConvergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNoConvergence;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    }
    return kExitOk;
}
