#include "erar/exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace erar {

namespace {

void check_anchor(const TabularMdp& mdp, AnchorIndex anchor) {
    if (anchor.state < 0 || anchor.state >= mdp.num_states() || anchor.action < 0 ||
        anchor.action >= mdp.num_actions())
        throw std::invalid_argument("anchor index out of range");
}

std::size_t flat(const AnchorIndex& a, int num_actions) {
    return static_cast<std::size_t>(a.state) * num_actions + a.action;
}

// E[v(s')] for every (s, a), with the shared mixing mean hoisted out.
void expected_next_all(const TabularMdp& mdp, const std::vector<double>& v,
                       std::vector<double>& out) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    const double mix = mdp.mixing();
    double v_mean = 0.0;
    if (mix > 0.0) {
        for (double x : v) v_mean += x;
        v_mean = mix * (v_mean / S);
    }
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const SparseRow& row = mdp.base_row(s, a);
            double acc = 0.0;
            for (std::size_t k = 0; k < row.idx.size(); ++k) acc += row.p[k] * v[row.idx[k]];
            out[static_cast<std::size_t>(s) * A + a] = (1.0 - mix) * acc + v_mean;
        }
    }
}

// One backup sweep target: out(s,a) = r(s,a) - theta + E[V(s')], V from q.
void backup_sweep(const TabularMdp& mdp, const TabularPolicy& policy,
                  const std::vector<double>& kl_over_beta, double theta,
                  const std::vector<double>& q, std::vector<double>& v_buf,
                  std::vector<double>& out) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    for (int s = 0; s < S; ++s) {
        double v = -kl_over_beta[s];
        for (int a = 0; a < A; ++a) v += policy(s, a) * q[static_cast<std::size_t>(s) * A + a];
        v_buf[s] = v;
    }
    expected_next_all(mdp, v_buf, out);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            out[static_cast<std::size_t>(s) * A + a] += mdp.reward(s, a) - theta;
}

std::pair<DifferentialValue, SolveReport>
evaluate_impl(const TabularMdp& mdp, const TabularPolicy& policy, double inv_temperature,
              double tolerance, long max_iters, AnchorIndex anchor,
              const std::vector<double>* warm_start) {
    if (!(tolerance > 0.0)) throw std::invalid_argument("soft_policy_evaluation: tolerance must be > 0");
    if (!(inv_temperature > 0.0))
        throw std::invalid_argument("soft_policy_evaluation: inv_temperature must be > 0");
    check_anchor(mdp, anchor);

    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    const double theta = reward_rate(mdp, policy, inv_temperature, true);

    std::vector<double> kl_over_beta(S);
    for (int s = 0; s < S; ++s)
        kl_over_beta[s] = kl_divergence(policy, mdp.prior(), s) / inv_temperature;

    std::vector<double> q(static_cast<std::size_t>(S) * A, 0.0);
    if (warm_start && warm_start->size() == q.size()) q = *warm_start;
    std::vector<double> next(q.size());
    std::vector<double> v_buf(S);

    SolveReport rep;
    rep.theta_history = {theta};
    double thresh = tolerance;
    const std::size_t anchor_flat = flat(anchor, A);
    while (rep.iterations < max_iters) {
        backup_sweep(mdp, policy, kl_over_beta, theta, q, v_buf, next);
        const double shift = next[anchor_flat];
        double delta = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            next[i] -= shift;
            delta = std::max(delta, std::abs(next[i] - q[i]));
        }
        q.swap(next);
        ++rep.iterations;
        if (delta < thresh) {
            // Explicit residual against the un-anchored backup operator.
            backup_sweep(mdp, policy, kl_over_beta, theta, q, v_buf, next);
            double residual = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i)
                residual = std::max(residual, std::abs(next[i] - q[i]));
            rep.final_residual = residual;
            if (residual <= 10.0 * tolerance) {
                rep.converged = true;
                break;
            }
            thresh *= 0.1; // slow-mixing chain: keep sweeping
        }
    }
    if (!rep.converged)
        throw ConvergenceError("soft_policy_evaluation: no fixed point within max_iters", rep);

    DifferentialValue dv;
    dv.num_states = S;
    dv.num_actions = A;
    dv.q = std::move(q);
    dv.theta = theta;
    dv.anchor = anchor;
    dv.q[anchor_flat] = 0.0; // exact, not just within round-off
    return {std::move(dv), std::move(rep)};
}

} // namespace

double soft_state_value(const DifferentialValue& dv, const TabularPolicy& policy,
                        const TabularPolicy& prior, double inv_temperature, int state) {
    if (state < 0 || state >= dv.num_states)
        throw std::invalid_argument("soft_state_value: state out of range");
    double v = 0.0;
    for (int a = 0; a < dv.num_actions; ++a) {
        const double p = policy(state, a);
        if (p == 0.0) continue;
        const double q0 = prior(state, a);
        if (q0 == 0.0)
            throw DivergenceError("soft_state_value: policy mass outside prior support");
        v += p * (dv.q_at(state, a) - std::log(p / q0) / inv_temperature);
    }
    return v;
}

std::pair<DifferentialValue, SolveReport>
soft_policy_evaluation(const TabularMdp& mdp, const TabularPolicy& policy, double inv_temperature,
                       double tolerance, long max_iters, AnchorIndex anchor) {
    return evaluate_impl(mdp, policy, inv_temperature, tolerance, max_iters, anchor, nullptr);
}

TabularPolicy soft_policy_improvement(const DifferentialValue& dv, const TabularPolicy& prior,
                                      double inv_temperature) {
    const int S = dv.num_states;
    const int A = dv.num_actions;
    for (double x : dv.q)
        if (!std::isfinite(x)) throw std::invalid_argument("soft_policy_improvement: non-finite Q");

    TabularPolicy out;
    out.num_states = S;
    out.num_actions = A;
    out.probs.resize(static_cast<std::size_t>(S) * A);
    for (int s = 0; s < S; ++s) {
        double m = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) m = std::max(m, inv_temperature * dv.q_at(s, a));
        double z = 0.0;
        for (int a = 0; a < A; ++a) {
            const double w = prior(s, a) * std::exp(inv_temperature * dv.q_at(s, a) - m);
            out.at(s, a) = w;
            z += w;
        }
        for (int a = 0; a < A; ++a) out.at(s, a) /= z;
    }
    return out;
}

PolicyIterationResult soft_policy_iteration(const TabularMdp& mdp, double inv_temperature,
                                            double tolerance, int max_rounds,
                                            double eval_tolerance, long eval_max_iters,
                                            AnchorIndex anchor) {
    if (!(tolerance > 0.0)) throw std::invalid_argument("soft_policy_iteration: tolerance must be > 0");

    TabularPolicy pi = mdp.prior();
    SolveReport rep;
    std::vector<double> warm;
    DifferentialValue dv;
    for (int round = 0; round < max_rounds; ++round) {
        auto [value, eval_rep] =
            evaluate_impl(mdp, pi, inv_temperature, eval_tolerance, eval_max_iters, anchor,
                          warm.empty() ? nullptr : &warm);
        dv = std::move(value);
        warm = dv.q;
        rep.theta_history.push_back(dv.theta);
        rep.final_residual = eval_rep.final_residual;
        ++rep.iterations;

        TabularPolicy next = soft_policy_improvement(dv, mdp.prior(), inv_temperature);
        const double delta = next.max_diff(pi);
        pi = std::move(next);
        if (delta < tolerance) {
            // Re-evaluate so the returned value matches the returned policy.
            auto [final_value, final_rep] = evaluate_impl(mdp, pi, inv_temperature, eval_tolerance,
                                                          eval_max_iters, anchor, &warm);
            dv = std::move(final_value);
            rep.theta_history.push_back(dv.theta);
            rep.final_residual = final_rep.final_residual;
            rep.converged = true;
            return {std::move(pi), std::move(dv), std::move(rep)};
        }
    }
    throw ConvergenceError("soft_policy_iteration: policy did not settle within max_rounds", rep);
}

double rate_gap_rhs(const TabularMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_prime,
                    const DifferentialValue& dv_pi, double inv_temperature) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    const StationaryDistribution d = stationary_distribution(mdp, pi_prime);
    double rhs = 0.0;
    for (int s = 0; s < S; ++s) {
        const double v = soft_state_value(dv_pi, pi, mdp.prior(), inv_temperature, s);
        double acc = 0.0;
        for (int a = 0; a < A; ++a) {
            const double p = pi_prime(s, a);
            if (p == 0.0) continue;
            const double q0 = mdp.prior()(s, a);
            if (q0 == 0.0) throw DivergenceError("rate_gap_rhs: pi' mass outside prior support");
            acc += p * (dv_pi.q_at(s, a) - v - std::log(p / q0) / inv_temperature);
        }
        rhs += d.d[s] * acc;
    }
    return rhs;
}

std::vector<double> discounted_soft_q(const TabularMdp& mdp, double inv_temperature,
                                      double discount, double tolerance, long max_iters) {
    if (!(discount >= 0.0 && discount < 1.0))
        throw std::invalid_argument("discounted_soft_q: discount must be in [0, 1)");
    if (!(inv_temperature > 0.0))
        throw std::invalid_argument("discounted_soft_q: inv_temperature must be > 0");
    if (!(tolerance > 0.0)) throw std::invalid_argument("discounted_soft_q: tolerance must be > 0");

    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    std::vector<double> q(static_cast<std::size_t>(S) * A, 0.0);
    std::vector<double> v(S), next(q.size());
    SolveReport rep;
    for (long it = 0; it < max_iters; ++it) {
        for (int s = 0; s < S; ++s) {
            double m = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < A; ++a)
                m = std::max(m, inv_temperature * q[static_cast<std::size_t>(s) * A + a]);
            double z = 0.0;
            for (int a = 0; a < A; ++a)
                z += mdp.prior()(s, a) *
                     std::exp(inv_temperature * q[static_cast<std::size_t>(s) * A + a] - m);
            v[s] = (m + std::log(z)) / inv_temperature;
        }
        expected_next_all(mdp, v, next);
        double delta = 0.0;
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                const std::size_t i = static_cast<std::size_t>(s) * A + a;
                next[i] = mdp.reward(s, a) + discount * next[i];
                delta = std::max(delta, std::abs(next[i] - q[i]));
            }
        }
        q.swap(next);
        ++rep.iterations;
        if (delta < tolerance) return q;
    }
    throw ConvergenceError("discounted_soft_q: contraction did not reach tolerance", rep);
}

double centered_q_distance(std::span<const double> qa, std::span<const double> qb,
                           int num_actions, AnchorIndex anchor) {
    if (qa.size() != qb.size()) throw std::invalid_argument("centered_q_distance: size mismatch");
    const std::size_t i0 = flat(anchor, num_actions);
    const double ca = qa[i0], cb = qb[i0];
    double m = 0.0;
    for (std::size_t i = 0; i < qa.size(); ++i)
        m = std::max(m, std::abs((qa[i] - ca) - (qb[i] - cb)));
    return m;
}

namespace {

struct CheckAccumulator {
    CheckResult result;
    explicit CheckAccumulator(std::string name, double threshold, bool expected = false) {
        result.name = std::move(name);
        result.threshold = threshold;
        result.expected_failure = expected;
        result.worst = -std::numeric_limits<double>::infinity();
    }
    // `margin` > 0 means the check failed by that much.
    void record(double margin, std::uint64_t seed) {
        result.worst = std::max(result.worst, margin);
        if (margin > 0.0) {
            ++result.violations;
            if (result.failing_seeds.size() < 16) result.failing_seeds.push_back(seed);
        }
    }
};

} // namespace

VerifyReport verify_theorems(const VerifyOptions& opt) {
    if (opt.num_mdps < 1) throw std::invalid_argument("verify_theorems: num_mdps must be >= 1");
    if (opt.sizes.empty()) throw std::invalid_argument("verify_theorems: sizes must be nonempty");

    constexpr double kGapTol = 1e-8;
    constexpr double kMonoTol = 1e-10;
    constexpr double kStrictGap = 1e-12;
    constexpr double kPolicyDiff = 1e-6;
    constexpr double kFixedTol = 1e-8;

    CheckAccumulator rate_gap_improved("rate_gap_improved", kGapTol);
    CheckAccumulator rate_gap_random("rate_gap_random_pair", kGapTol);
    CheckAccumulator monotone("improvement_monotone", kMonoTol, opt.perturb_pi_prime > 0.0);
    CheckAccumulator strict("improvement_strict", kStrictGap, opt.perturb_pi_prime > 0.0);
    CheckAccumulator fp_boltzmann("fixed_point_boltzmann", kFixedTol);
    CheckAccumulator fp_residual("fixed_point_residual", kFixedTol);

    VerifyReport report;
    for (int i = 0; i < opt.num_mdps; ++i) {
        const std::uint64_t mdp_seed = derive_seed(opt.seed, static_cast<std::uint64_t>(i));
        const auto [S, A] = opt.sizes[static_cast<std::size_t>(i) % opt.sizes.size()];
        const TabularMdp mdp = make_random_mdp(mdp_seed, S, A, opt.mixing);

        const TabularPolicy pi = make_random_policy(derive_seed(mdp_seed, 1), S, A);
        const TabularPolicy pi_other = make_random_policy(derive_seed(mdp_seed, 2), S, A);

        auto [dv, eval_rep] = soft_policy_evaluation(mdp, pi, opt.inv_temperature,
                                                     opt.eval_tolerance, 1000000);
        TabularPolicy pi_prime = soft_policy_improvement(dv, mdp.prior(), opt.inv_temperature);
        if (opt.perturb_pi_prime > 0.0) {
            const double eps = opt.perturb_pi_prime;
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a)
                    pi_prime.at(s, a) = (1.0 - eps) * pi_prime(s, a) + eps / A;
        }

        const double theta_pi = dv.theta;
        const double theta_prime = reward_rate(mdp, pi_prime, opt.inv_temperature, true);
        const double theta_other = reward_rate(mdp, pi_other, opt.inv_temperature, true);

        const double rhs_prime = rate_gap_rhs(mdp, pi, pi_prime, dv, opt.inv_temperature);
        rate_gap_improved.record(std::abs((theta_prime - theta_pi) - rhs_prime) - kGapTol, mdp_seed);
        const double rhs_other = rate_gap_rhs(mdp, pi, pi_other, dv, opt.inv_temperature);
        rate_gap_random.record(std::abs((theta_other - theta_pi) - rhs_other) - kGapTol, mdp_seed);

        monotone.record(-(theta_prime - theta_pi) - kMonoTol, mdp_seed);
        if (pi_prime.max_diff(pi) > kPolicyDiff)
            strict.record(kStrictGap - (theta_prime - theta_pi), mdp_seed);

        auto pr = soft_policy_iteration(mdp, opt.inv_temperature, opt.pi_tolerance, 10000,
                                        opt.eval_tolerance, 1000000);
        const TabularPolicy reimproved =
            soft_policy_improvement(pr.value, mdp.prior(), opt.inv_temperature);
        fp_boltzmann.record(reimproved.max_diff(pr.policy) - kFixedTol, mdp_seed);
        fp_residual.record(pr.report.final_residual - kFixedTol, mdp_seed);

        if (opt.perturb_pi_prime > 0.0) {
            // Negative control at the fixed point: the converged policy is the
            // unique maximizer, so any perturbation strictly lowers the rate.
            TabularPolicy off = reimproved;
            const double eps = opt.perturb_pi_prime;
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) off.at(s, a) = (1.0 - eps) * off(s, a) + eps / A;
            const double gap =
                reward_rate(mdp, off, opt.inv_temperature, true) - pr.value.theta;
            monotone.record(-gap - kMonoTol, mdp_seed);
            if (off.max_diff(pr.policy) > kPolicyDiff)
                strict.record(kStrictGap - gap, mdp_seed);
        }

        ++report.mdps_checked;
    }

    report.checks = {rate_gap_improved.result, rate_gap_random.result, monotone.result,
                     strict.result,            fp_boltzmann.result,    fp_residual.result};
    report.all_pass = true;
    for (const CheckResult& c : report.checks)
        if (c.violations > 0) report.all_pass = false;
    return report;
}

} // namespace erar
