#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "erar/errors.hpp"
#include "erar/mdp.hpp"

namespace erar {

struct AnchorIndex {
    int state = 0;
    int action = 0;
};

/// Differential (bias) action-value table with its reward rate. The backup
/// equation pins Q only up to an additive constant; the representative with
/// Q[anchor] = 0 is stored.
struct DifferentialValue {
    int num_states = 0;
    int num_actions = 0;
    std::vector<double> q; // [s*A + a]
    double theta = 0.0;
    AnchorIndex anchor;

    double q_at(int s, int a) const { return q[static_cast<std::size_t>(s) * num_actions + a]; }
};

struct SolveReport {
    long iterations = 0;
    double final_residual = 0.0;
    std::vector<double> theta_history;
    bool converged = false;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, SolveReport rep)
        : std::runtime_error(what), report(std::move(rep)) {}
    SolveReport report;
};

/// V(s) = E_{a~pi}[ Q(s,a) - log(pi(a|s)/prior(a|s)) / beta ].
double soft_state_value(const DifferentialValue& dv, const TabularPolicy& policy,
                        const TabularPolicy& prior, double inv_temperature, int state);

/// Policy evaluation: theta from the closed-form reward rate, then fixed-point
/// iteration Q <- r - theta + P V(Q), re-anchored every sweep, until the
/// sup-norm change drops below `tolerance` and the backup residual is within
/// 10 * tolerance. Throws ConvergenceError (carrying the report) on failure.
std::pair<DifferentialValue, SolveReport>
soft_policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy, double inv_temperature,
                       double tolerance = 1e-10, long max_iters = 100000,
                       AnchorIndex anchor = {});

/// Boltzmann improvement pi'(a|s) proportional to prior(a|s) exp(beta Q(s,a)),
/// computed with max-subtraction. Invariant under Q -> Q + c.
TabularPolicy soft_policy_improvement(const DifferentialValue& dv, const TabularPolicy& prior,
                                      double inv_temperature);

struct PolicyIterationResult {
    TabularPolicy policy;
    DifferentialValue value;
    SolveReport report; // theta_history holds one entry per improvement round
};

/// Alternates evaluation and improvement from the prior until the policy
/// stops moving in sup norm.
PolicyIterationResult soft_policy_iteration(const TabularMdp& mdp, double inv_temperature,
                                            double tolerance = 1e-9, int max_rounds = 10000,
                                            double eval_tolerance = 1e-10,
                                            long eval_max_iters = 100000, AnchorIndex anchor = {});

/// Right-hand side of the rate-gap identity:
///   E_{s~d_{pi'}, a~pi'}[ A(s,a) - log(pi'(a|s)/prior(a|s)) / beta ]
/// with A = Q - V taken from the evaluated value of `pi`.
double rate_gap_rhs(const TabularMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_prime,
                    const DifferentialValue& dv_pi, double inv_temperature);

/// Optimal soft discounted Q: fixed point of Q <- r + gamma P V_soft(Q) with
/// V_soft(s) = log( sum_a prior(a|s) exp(beta Q(s,a)) ) / beta.
std::vector<double> discounted_soft_q(const TabularMdp& mdp, double inv_temperature,
                                      double discount, double tolerance = 1e-9,
                                      long max_iters = 10000000);

/// Sup-norm distance between two Q tables after each is shifted so its anchor
/// entry is zero.
double centered_q_distance(std::span<const double> qa, std::span<const double> qb,
                           int num_actions, AnchorIndex anchor = {});

struct VerifyOptions {
    int num_mdps = 100;
    std::uint64_t seed = 0;
    std::vector<std::pair<int, int>> sizes = {{5, 3}, {20, 4}}; // (states, actions)
    double inv_temperature = 1.0;
    double mixing = 0.1;
    double perturb_pi_prime = 0.0; // bug-injection mode: mix uniform noise into pi'
    double eval_tolerance = 1e-12;
    double pi_tolerance = 1e-10;
};

struct CheckResult {
    std::string name;
    double threshold = 0.0;
    double worst = 0.0; // largest observed violation margin (<= 0 means clean)
    long violations = 0;
    bool expected_failure = false; // set under bug injection
    std::vector<std::uint64_t> failing_seeds;
};

struct VerifyReport {
    int mdps_checked = 0;
    std::vector<CheckResult> checks;
    bool all_pass = false;
};

/// Batch numerical verification of the rate-gap identity, policy-improvement
/// monotonicity (with strictness when the policies differ), and the
/// fixed-point Boltzmann condition, over freshly generated random MDPs.
VerifyReport verify_theorems(const VerifyOptions& options);

} // namespace erar
