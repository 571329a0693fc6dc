#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "erar/mdp.hpp"
#include "erar/rng.hpp"

namespace erar {

struct EnvSpec {
    int obs_dim = 0;
    int action_dim = 0;        // continuous action dimensions
    int discrete_actions = 0;  // > 0 for tabular-embedded envs (bin count)
    double reward_min = 0.0;
    double reward_max = 0.0;
    bool has_termination = false;
    std::string initial_distribution;
};

struct StepResult {
    std::vector<double> obs;
    double reward = 0.0;
    bool terminated = false;
    bool action_clipped = false; // out-of-bounds action was clipped; diagnostic only
};

/// Single-owner mutable state machine. clone() copies the full state including
/// the RNG stream, so clones evolve independently but deterministically.
class Env {
public:
    virtual ~Env() = default;
    virtual const EnvSpec& spec() const = 0;
    virtual std::vector<double> reset(std::uint64_t seed) = 0;
    virtual StepResult step(std::span<const double> action) = 0;
    virtual std::unique_ptr<Env> clone() const = 0;
    virtual std::string name() const = 0;

    /// Internal state as text fields, for bit-reproducible checkpoints.
    virtual std::vector<std::string> save_state() const = 0;
    virtual void load_state(const std::vector<std::string>& state) = 0;
};

/// Map a continuous action in (-1,1) to one of `bins` equal-width bins, and a
/// bin index back to its center -1 + (2k+1)/bins.
int bin_action(double action, int bins);
double bin_center(int bin, int bins);

/// Tabular MDP exposed as a continuing control task: one-hot observations,
/// continuous scalar action binned into the discrete action set, initial
/// distribution a point mass on state 0.
class TabularEmbeddedEnv final : public Env {
public:
    explicit TabularEmbeddedEnv(TabularMdp mdp, std::string name = "tabular");

    const EnvSpec& spec() const override { return spec_; }
    std::vector<double> reset(std::uint64_t seed) override;
    StepResult step(std::span<const double> action) override;
    std::unique_ptr<Env> clone() const override { return std::make_unique<TabularEmbeddedEnv>(*this); }
    std::string name() const override { return name_; }
    std::vector<std::string> save_state() const override;
    void load_state(const std::vector<std::string>& state) override;

    const TabularMdp& mdp() const { return mdp_; }
    int current_state() const { return state_; }

private:
    std::vector<double> observe() const;

    TabularMdp mdp_;
    std::string name_;
    EnvSpec spec_;
    int state_ = 0;
    Rng rng_{0};
};

struct PendulumParams {
    double gravity = 10.0;
    double mass = 1.0;
    double length = 1.0;
    double dt = 0.05;
    double torque_scale = 2.0;
    double max_speed = 8.0;
    double angle_cost = 1.0;
    double vel_cost = 0.1;
    double torque_cost = 0.001;
};

/// Swing-up pendulum, angle 0 = upright. Dynamics integrated with
/// semi-implicit Euler (velocity first, then angle with the new velocity);
/// this keeps energy drift bounded where the forward-Euler update diverges.
/// Observation [cos th, sin th, th_dot / max_speed]; reward
/// -(angle_cost*wrap(th)^2 + vel_cost*th_dot^2 + torque_cost*u^2) evaluated at
/// the pre-step state; never terminates. Reset: th ~ U(-pi, pi], th_dot = 0.
class PendulumEnv final : public Env {
public:
    explicit PendulumEnv(PendulumParams params = {});

    const EnvSpec& spec() const override { return spec_; }
    std::vector<double> reset(std::uint64_t seed) override;
    StepResult step(std::span<const double> action) override;
    std::unique_ptr<Env> clone() const override { return std::make_unique<PendulumEnv>(*this); }
    std::string name() const override { return "pendulum"; }
    std::vector<std::string> save_state() const override;
    void load_state(const std::vector<std::string>& state) override;

    const PendulumParams& params() const { return params_; }
    double angle() const { return theta_; }
    double velocity() const { return theta_dot_; }
    void set_state(double theta, double theta_dot);

    /// Total mechanical energy, potential measured from the pivot.
    double energy() const;

private:
    std::vector<double> observe() const;

    PendulumParams params_;
    EnvSpec spec_;
    double theta_ = 0.0;
    double theta_dot_ = 0.0;
    Rng rng_{0};
};

/// 2-d point mass: position += 0.1 * action, reward -|position|^2 at the new
/// position, terminates when |position|_inf > 1. Reset: uniform in
/// [-0.5, 0.5]^2.
class PointMassEnv final : public Env {
public:
    PointMassEnv();

    const EnvSpec& spec() const override { return spec_; }
    std::vector<double> reset(std::uint64_t seed) override;
    StepResult step(std::span<const double> action) override;
    std::unique_ptr<Env> clone() const override { return std::make_unique<PointMassEnv>(*this); }
    std::string name() const override { return "pointmass"; }
    std::vector<std::string> save_state() const override;
    void load_state(const std::vector<std::string>& state) override;

private:
    EnvSpec spec_;
    double pos_[2] = {0.0, 0.0};
    Rng rng_{0};
};

/// Wrap an angle into (-pi, pi].
double angle_wrap(double theta);

/// Deterministic grid discretization of the pendulum: states are the
/// grid_theta x grid_vel lattice over (-pi, pi] x [-max_speed, max_speed],
/// actions the grid_torque bin centers on (-1, 1). Each transition integrates
/// one step from the exact grid point and snaps the result to the nearest
/// grid point. A small uniform `mixing` mass keeps the chain communicating
/// (pure snapping leaves absorbing states, e.g. rest at the bottom). Prior is
/// uniform. Feeds soft_policy_iteration to produce the continuous-control
/// oracle rate.
TabularMdp discretize_pendulum(int grid_theta, int grid_vel, int grid_torque,
                               double mixing = 1e-4, PendulumParams params = {});

/// Env factory by name: "ring", "ring:<S>", "random_tabular:<seed>:<S>:<A>",
/// "pendulum", "pointmass".
std::unique_ptr<Env> make_env(const std::string& name);

} // namespace erar
