#include "erar/envs.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace erar {

namespace {

constexpr double kPi = 3.14159265358979323846;

double parse_double_field(const std::string& s) {
    return std::stod(s);
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

} // namespace

double angle_wrap(double theta) {
    double t = std::fmod(theta + kPi, 2.0 * kPi);
    if (t <= 0.0) t += 2.0 * kPi;
    return t - kPi;
}

int bin_action(double action, int bins) {
    const int k = static_cast<int>((action + 1.0) * 0.5 * bins);
    return std::clamp(k, 0, bins - 1);
}

double bin_center(int bin, int bins) {
    return -1.0 + (2.0 * bin + 1.0) / bins;
}

TabularEmbeddedEnv::TabularEmbeddedEnv(TabularMdp mdp, std::string name)
    : mdp_(std::move(mdp)), name_(std::move(name)) {
    spec_.obs_dim = mdp_.num_states();
    spec_.action_dim = 1;
    spec_.discrete_actions = mdp_.num_actions();
    spec_.reward_min = *std::min_element(mdp_.rewards().begin(), mdp_.rewards().end());
    spec_.reward_max = *std::max_element(mdp_.rewards().begin(), mdp_.rewards().end());
    spec_.has_termination = false;
    spec_.initial_distribution = "delta(state 0)";
}

std::vector<double> TabularEmbeddedEnv::observe() const {
    std::vector<double> obs(static_cast<std::size_t>(mdp_.num_states()), 0.0);
    obs[state_] = 1.0;
    return obs;
}

std::vector<double> TabularEmbeddedEnv::reset(std::uint64_t seed) {
    rng_ = Rng(derive_seed(seed, 0x656e76)); // "env"
    state_ = 0;
    return observe();
}

StepResult TabularEmbeddedEnv::step(std::span<const double> action) {
    if (action.size() != 1) throw std::invalid_argument("TabularEmbeddedEnv: expected 1-d action");
    StepResult out;
    double a = action[0];
    if (a < -1.0 || a > 1.0) {
        a = std::clamp(a, -1.0, 1.0);
        out.action_clipped = true;
    }
    const int k = bin_action(a, mdp_.num_actions());
    out.reward = mdp_.reward(state_, k);
    state_ = mdp_.sample_next(state_, k, rng_);
    out.obs = observe();
    out.terminated = false;
    return out;
}

std::vector<std::string> TabularEmbeddedEnv::save_state() const {
    return {std::to_string(state_), rng_.save_state()};
}

void TabularEmbeddedEnv::load_state(const std::vector<std::string>& state) {
    if (state.size() != 2) throw std::invalid_argument("TabularEmbeddedEnv: bad state record");
    state_ = std::stoi(state[0]);
    rng_.load_state(state[1]);
}

PendulumEnv::PendulumEnv(PendulumParams params) : params_(params) {
    spec_.obs_dim = 3;
    spec_.action_dim = 1;
    spec_.discrete_actions = 0;
    const double worst = params_.angle_cost * kPi * kPi +
                         params_.vel_cost * params_.max_speed * params_.max_speed +
                         params_.torque_cost * params_.torque_scale * params_.torque_scale;
    spec_.reward_min = -worst;
    spec_.reward_max = 0.0;
    spec_.has_termination = false;
    spec_.initial_distribution = "theta ~ U(-pi, pi], theta_dot = 0";
}

std::vector<double> PendulumEnv::observe() const {
    // Velocity scaled into [-1, 1] so all observation channels share range.
    return {std::cos(theta_), std::sin(theta_), theta_dot_ / params_.max_speed};
}

std::vector<double> PendulumEnv::reset(std::uint64_t seed) {
    rng_ = Rng(derive_seed(seed, 0x656e76));
    theta_ = kPi - 2.0 * kPi * rng_.uniform(); // (-pi, pi]
    theta_dot_ = 0.0;
    return observe();
}

void PendulumEnv::set_state(double theta, double theta_dot) {
    theta_ = angle_wrap(theta);
    theta_dot_ = std::clamp(theta_dot, -params_.max_speed, params_.max_speed);
}

double PendulumEnv::energy() const {
    const double inertia = params_.mass * params_.length * params_.length;
    return 0.5 * inertia * theta_dot_ * theta_dot_ +
           params_.mass * params_.gravity * params_.length * std::cos(theta_);
}

StepResult PendulumEnv::step(std::span<const double> action) {
    if (action.size() != 1) throw std::invalid_argument("PendulumEnv: expected 1-d action");
    StepResult out;
    double a = action[0];
    if (a < -1.0 || a > 1.0) {
        a = std::clamp(a, -1.0, 1.0);
        out.action_clipped = true;
    }
    const double u = params_.torque_scale * a;
    const double w = angle_wrap(theta_);
    out.reward = -(params_.angle_cost * w * w + params_.vel_cost * theta_dot_ * theta_dot_ +
                   params_.torque_cost * u * u);

    const double inertia = params_.mass * params_.length * params_.length;
    const double acc = (params_.gravity / params_.length) * std::sin(theta_) + u / inertia;
    theta_dot_ = std::clamp(theta_dot_ + params_.dt * acc, -params_.max_speed, params_.max_speed);
    theta_ = angle_wrap(theta_ + params_.dt * theta_dot_);

    out.obs = observe();
    out.terminated = false;
    return out;
}

std::vector<std::string> PendulumEnv::save_state() const {
    char buf[64];
    std::vector<std::string> out;
    std::snprintf(buf, sizeof buf, "%.17g", theta_);
    out.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "%.17g", theta_dot_);
    out.emplace_back(buf);
    out.push_back(rng_.save_state());
    return out;
}

void PendulumEnv::load_state(const std::vector<std::string>& state) {
    if (state.size() != 3) throw std::invalid_argument("PendulumEnv: bad state record");
    theta_ = parse_double_field(state[0]);
    theta_dot_ = parse_double_field(state[1]);
    rng_.load_state(state[2]);
}

PointMassEnv::PointMassEnv() {
    spec_.obs_dim = 2;
    spec_.action_dim = 2;
    spec_.discrete_actions = 0;
    spec_.reward_min = -2.42; // |(1.1, 1.1)|^2, worst one-step overshoot
    spec_.reward_max = 0.0;
    spec_.has_termination = true;
    spec_.initial_distribution = "uniform([-0.5, 0.5]^2)";
}

std::vector<double> PointMassEnv::reset(std::uint64_t seed) {
    rng_ = Rng(derive_seed(seed, 0x656e76));
    pos_[0] = rng_.uniform(-0.5, 0.5);
    pos_[1] = rng_.uniform(-0.5, 0.5);
    return {pos_[0], pos_[1]};
}

StepResult PointMassEnv::step(std::span<const double> action) {
    if (action.size() != 2) throw std::invalid_argument("PointMassEnv: expected 2-d action");
    StepResult out;
    for (int d = 0; d < 2; ++d) {
        double a = action[d];
        if (a < -1.0 || a > 1.0) {
            a = std::clamp(a, -1.0, 1.0);
            out.action_clipped = true;
        }
        pos_[d] += 0.1 * a;
    }
    out.reward = -(pos_[0] * pos_[0] + pos_[1] * pos_[1]);
    out.terminated = std::max(std::abs(pos_[0]), std::abs(pos_[1])) > 1.0;
    out.obs = {pos_[0], pos_[1]};
    return out;
}

std::vector<std::string> PointMassEnv::save_state() const {
    char buf[64];
    std::vector<std::string> out;
    std::snprintf(buf, sizeof buf, "%.17g", pos_[0]);
    out.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "%.17g", pos_[1]);
    out.emplace_back(buf);
    out.push_back(rng_.save_state());
    return out;
}

void PointMassEnv::load_state(const std::vector<std::string>& state) {
    if (state.size() != 3) throw std::invalid_argument("PointMassEnv: bad state record");
    pos_[0] = parse_double_field(state[0]);
    pos_[1] = parse_double_field(state[1]);
    rng_.load_state(state[2]);
}

TabularMdp discretize_pendulum(int grid_theta, int grid_vel, int grid_torque, double mixing,
                               PendulumParams params) {
    if (grid_theta < 8 || grid_vel < 8 || grid_torque < 8)
        throw std::invalid_argument("discretize_pendulum: grids must be >= 8");
    if (!(mixing >= 0.0 && mixing < 1.0))
        throw std::invalid_argument("discretize_pendulum: mixing must be in [0, 1)");

    const int S = grid_theta * grid_vel;
    const int A = grid_torque;
    const double dth = 2.0 * kPi / grid_theta;
    const double dv = 2.0 * params.max_speed / (grid_vel - 1);
    const auto theta_of = [&](int i) { return -kPi + dth * i; };
    const auto vel_of = [&](int j) { return -params.max_speed + dv * j; };
    const auto snap_theta = [&](double th) {
        const int i = static_cast<int>(std::lround((angle_wrap(th) + kPi) / dth));
        return (i % grid_theta + grid_theta) % grid_theta;
    };
    const auto snap_vel = [&](double v) {
        const int j = static_cast<int>(std::lround((v + params.max_speed) / dv));
        return std::clamp(j, 0, grid_vel - 1);
    };

    const double inertia = params.mass * params.length * params.length;
    std::vector<SparseRow> rows(static_cast<std::size_t>(S) * A);
    std::vector<double> rewards(static_cast<std::size_t>(S) * A);
    for (int i = 0; i < grid_theta; ++i) {
        for (int j = 0; j < grid_vel; ++j) {
            const int s = i * grid_vel + j;
            const double th = theta_of(i);
            const double v = vel_of(j);
            for (int k = 0; k < A; ++k) {
                const double u = params.torque_scale * bin_center(k, A);
                rewards[static_cast<std::size_t>(s) * A + k] =
                    -(params.angle_cost * angle_wrap(th) * angle_wrap(th) +
                      params.vel_cost * v * v + params.torque_cost * u * u);
                const double acc = (params.gravity / params.length) * std::sin(th) + u / inertia;
                const double v2 =
                    std::clamp(v + params.dt * acc, -params.max_speed, params.max_speed);
                const double th2 = th + params.dt * v2;
                const int next = snap_theta(th2) * grid_vel + snap_vel(v2);
                rows[static_cast<std::size_t>(s) * A + k].idx = {next};
                rows[static_cast<std::size_t>(s) * A + k].p = {1.0};
            }
        }
    }
    return TabularMdp(S, A, std::move(rows), mixing, std::move(rewards),
                      TabularPolicy::uniform(S, A));
}

std::unique_ptr<Env> make_env(const std::string& name) {
    const std::vector<std::string> parts = split(name, ':');
    if (parts[0] == "ring") {
        const int S = parts.size() > 1 ? std::stoi(parts[1]) : 5;
        return std::make_unique<TabularEmbeddedEnv>(make_ring_mdp(S), name);
    }
    if (parts[0] == "random_tabular") {
        if (parts.size() != 4)
            throw std::invalid_argument("make_env: expected random_tabular:<seed>:<S>:<A>");
        const std::uint64_t seed = std::stoull(parts[1]);
        const int S = std::stoi(parts[2]);
        const int A = std::stoi(parts[3]);
        return std::make_unique<TabularEmbeddedEnv>(make_random_mdp(seed, S, A, 0.1), name);
    }
    if (parts[0] == "pendulum") return std::make_unique<PendulumEnv>();
    if (parts[0] == "pointmass") return std::make_unique<PointMassEnv>();
    throw std::invalid_argument("make_env: unknown environment '" + name + "'");
}

} // namespace erar
