#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "erar/rng.hpp"

namespace erar {

/// Row-stochastic policy table pi[s][a].
struct TabularPolicy {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> probs; // row-major, num_states * num_actions

    double operator()(int s, int a) const { return probs[static_cast<std::size_t>(s) * num_actions + a]; }
    double& at(int s, int a) { return probs[static_cast<std::size_t>(s) * num_actions + a]; }
    std::span<const double> row(int s) const {
        return {probs.data() + static_cast<std::size_t>(s) * num_actions,
                static_cast<std::size_t>(num_actions)};
    }

    static TabularPolicy uniform(int num_states, int num_actions);

    /// Throws std::invalid_argument unless every row is a probability vector
    /// (sum within 1e-12 of 1, entries >= 0).
    void validate() const;

    /// Largest per-entry absolute difference.
    double max_diff(const TabularPolicy& other) const;
};

/// One transition row stored sparsely: target indices and their probabilities.
struct SparseRow {
    std::vector<int> idx;
    std::vector<double> p;
};

/// Finite MDP with per-(s,a) transition rows of the form
///   P(s'|s,a) = (1 - mixing) * base(s'|s,a) + mixing / num_states,
/// where `base` rows are stored sparsely and `mixing` is one shared scalar.
/// Both built-in generators produce exactly this structure; a strictly
/// positive mixing mass constructively guarantees the communicating property.
/// General (user-loaded) MDPs use mixing = 0 with fully populated rows.
class TabularMdp {
public:
    TabularMdp() = default;

    /// General constructor from dense rows; mixing folded in must already be
    /// part of `transitions` (treated as mixing = 0).
    TabularMdp(int num_states, int num_actions,
               std::vector<double> transitions, // [s][a][s'] row-major
               std::vector<double> rewards,     // [s][a]
               TabularPolicy prior);

    /// Structured constructor used by the generators.
    TabularMdp(int num_states, int num_actions,
               std::vector<SparseRow> base_rows, double mixing,
               std::vector<double> rewards, TabularPolicy prior);

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    double mixing() const { return mixing_; }
    double reward(int s, int a) const { return rewards_[static_cast<std::size_t>(s) * num_actions_ + a]; }
    std::span<const double> rewards() const { return rewards_; }
    const TabularPolicy& prior() const { return prior_; }
    const SparseRow& base_row(int s, int a) const {
        return base_rows_[static_cast<std::size_t>(s) * num_actions_ + a];
    }

    /// Full transition probability including the mixing mass.
    double transition(int s, int a, int next) const;

    /// Materialize one full row (length num_states).
    std::vector<double> dense_row(int s, int a) const;

    /// E_{s' ~ P(.|s,a)}[ v(s') ].
    double expected_next(int s, int a, std::span<const double> v) const;

    /// Sample s' ~ P(.|s,a) from a single uniform draw: u < mixing selects the
    /// uniform branch (target = floor(u / mixing * S)), otherwise inverse CDF
    /// over the base row with (u - mixing) / (1 - mixing).
    int sample_next(int s, int a, Rng& rng) const;

    /// Structural invariants: row sums within 1e-12 of 1, probabilities and
    /// mixing nonnegative, rewards finite, prior valid with full support.
    void validate() const;

private:
    int num_states_ = 0;
    int num_actions_ = 0;
    std::vector<SparseRow> base_rows_; // [s*A + a]
    double mixing_ = 0.0;
    std::vector<double> rewards_; // [s*A + a]
    TabularPolicy prior_;
};

/// Random communicating MDP. Deterministic in `seed`: base transition rows
/// are Dirichlet(1,...,1) points (normalized exponentials of the documented
/// Rng uniforms), rewards uniform in [-1, 1], prior uniform. The `mixing`
/// mass towards the uniform distribution over states guarantees
/// irreducibility for every policy.
TabularMdp make_random_mdp(std::uint64_t seed, int num_states, int num_actions, double mixing);

/// Random policy with Dirichlet(1,...,1) rows; used by verification sweeps.
TabularPolicy make_random_policy(std::uint64_t seed, int num_states, int num_actions);

/// N-state ring: action 0 steps clockwise, action 1 counter-clockwise, each
/// with a `slip` chance of staying put (keeps the chain aperiodic). Reward 1
/// for stepping clockwise out of state 0, else 0. Uniform prior.
TabularMdp make_ring_mdp(int num_states, double slip = 0.1);

struct StationaryDistribution {
    std::vector<double> d;
};

/// Unique stationary distribution of the chain M[s][s'] = sum_a pi(a|s) P(s'|s,a).
/// Small/dense instances use a direct least-squares solve of (M^T - I) d = 0
/// with the normalization row appended; large instances with mixing > 0 use an
/// equivalent sparse nonsingular system. Falls back to damped power iteration
/// when the direct solve is singular beyond tolerance. Throws StructuralError
/// when the chain has more than one closed communicating class.
StationaryDistribution stationary_distribution(const TabularMdp& mdp, const TabularPolicy& policy);

/// KL(pi(.|s) || prior(.|s)) with the 0*log(0) = 0 convention. Throws
/// DivergenceError if pi puts mass where the prior has none.
double kl_divergence(const TabularPolicy& policy, const TabularPolicy& prior, int state);

/// Exact long-run reward rate under `policy`:
///   sum_s d(s) sum_a pi(a|s) [ r(s,a) - (entropy_on ? log(pi/prior)/beta : 0) ]
/// with d the stationary distribution. This closed form replaces the Cesaro
/// limit, valid because generated chains are communicating.
double reward_rate(const TabularMdp& mdp, const TabularPolicy& policy,
                   double inv_temperature, bool entropy_on);

/// Monte Carlo estimate of the entropy-regularized rate: one simulated
/// trajectory of `horizon` steps, running average of r - log(pi/prior)/beta.
/// Starts from a uniformly random state unless start_state >= 0.
double empirical_reward_rate(const TabularMdp& mdp, const TabularPolicy& policy,
                             double inv_temperature, long horizon, std::uint64_t seed,
                             int start_state = -1);

} // namespace erar
