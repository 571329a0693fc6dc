#include "erar/mdp.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "erar/errors.hpp"

namespace erar {

namespace {

constexpr double kRowSumTol = 1e-12;
constexpr double kStationaryTol = 1e-10;

void check_positive(long v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string(name) + " must be >= 1");
}

} // namespace

TabularPolicy TabularPolicy::uniform(int num_states, int num_actions) {
    check_positive(num_states, "num_states");
    check_positive(num_actions, "num_actions");
    TabularPolicy p;
    p.num_states = num_states;
    p.num_actions = num_actions;
    p.probs.assign(static_cast<std::size_t>(num_states) * num_actions, 1.0 / num_actions);
    return p;
}

void TabularPolicy::validate() const {
    if (num_states < 1 || num_actions < 1 ||
        probs.size() != static_cast<std::size_t>(num_states) * num_actions)
        throw std::invalid_argument("TabularPolicy: inconsistent dimensions");
    for (int s = 0; s < num_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < num_actions; ++a) {
            const double v = (*this)(s, a);
            if (!(v >= 0.0)) throw std::invalid_argument("TabularPolicy: negative probability at state " + std::to_string(s));
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTol)
            throw std::invalid_argument("TabularPolicy: row " + std::to_string(s) + " sums to " + std::to_string(sum));
    }
}

double TabularPolicy::max_diff(const TabularPolicy& other) const {
    double m = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        m = std::max(m, std::abs(probs[i] - other.probs[i]));
    return m;
}

TabularMdp::TabularMdp(int num_states, int num_actions, std::vector<double> transitions,
                       std::vector<double> rewards, TabularPolicy prior)
    : num_states_(num_states), num_actions_(num_actions), mixing_(0.0),
      rewards_(std::move(rewards)), prior_(std::move(prior)) {
    if (transitions.size() != static_cast<std::size_t>(num_states) * num_actions * num_states)
        throw std::invalid_argument("TabularMdp: transition tensor has wrong size");
    base_rows_.resize(static_cast<std::size_t>(num_states) * num_actions);
    for (int s = 0; s < num_states; ++s) {
        for (int a = 0; a < num_actions; ++a) {
            SparseRow& row = base_rows_[static_cast<std::size_t>(s) * num_actions + a];
            const double* src = transitions.data() +
                                (static_cast<std::size_t>(s) * num_actions + a) * num_states;
            for (int t = 0; t < num_states; ++t) {
                if (src[t] != 0.0) {
                    row.idx.push_back(t);
                    row.p.push_back(src[t]);
                }
            }
        }
    }
    validate();
}

TabularMdp::TabularMdp(int num_states, int num_actions, std::vector<SparseRow> base_rows,
                       double mixing, std::vector<double> rewards, TabularPolicy prior)
    : num_states_(num_states), num_actions_(num_actions), base_rows_(std::move(base_rows)),
      mixing_(mixing), rewards_(std::move(rewards)), prior_(std::move(prior)) {
    validate();
}

double TabularMdp::transition(int s, int a, int next) const {
    const SparseRow& row = base_row(s, a);
    double p = mixing_ / num_states_;
    for (std::size_t k = 0; k < row.idx.size(); ++k)
        if (row.idx[k] == next) p += (1.0 - mixing_) * row.p[k];
    return p;
}

std::vector<double> TabularMdp::dense_row(int s, int a) const {
    std::vector<double> out(static_cast<std::size_t>(num_states_), mixing_ / num_states_);
    const SparseRow& row = base_row(s, a);
    for (std::size_t k = 0; k < row.idx.size(); ++k)
        out[row.idx[k]] += (1.0 - mixing_) * row.p[k];
    return out;
}

double TabularMdp::expected_next(int s, int a, std::span<const double> v) const {
    const SparseRow& row = base_row(s, a);
    double acc = 0.0;
    for (std::size_t k = 0; k < row.idx.size(); ++k) acc += row.p[k] * v[row.idx[k]];
    if (mixing_ > 0.0) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= num_states_;
        return (1.0 - mixing_) * acc + mixing_ * mean;
    }
    return acc;
}

int TabularMdp::sample_next(int s, int a, Rng& rng) const {
    const double u = rng.uniform();
    if (u < mixing_) {
        const int t = static_cast<int>(u / mixing_ * num_states_);
        return t < num_states_ ? t : num_states_ - 1;
    }
    const double u2 = mixing_ < 1.0 ? (u - mixing_) / (1.0 - mixing_) : 0.0;
    const SparseRow& row = base_row(s, a);
    double cum = 0.0;
    for (std::size_t k = 0; k < row.idx.size(); ++k) {
        cum += row.p[k];
        if (u2 < cum) return row.idx[k];
    }
    return row.idx.empty() ? s : row.idx.back();
}

void TabularMdp::validate() const {
    check_positive(num_states_, "num_states");
    check_positive(num_actions_, "num_actions");
    if (!(mixing_ >= 0.0 && mixing_ <= 1.0))
        throw std::invalid_argument("TabularMdp: mixing must be in [0, 1]");
    if (base_rows_.size() != static_cast<std::size_t>(num_states_) * num_actions_)
        throw std::invalid_argument("TabularMdp: wrong number of transition rows");
    if (rewards_.size() != static_cast<std::size_t>(num_states_) * num_actions_)
        throw std::invalid_argument("TabularMdp: reward matrix has wrong size");
    for (double r : rewards_)
        if (!std::isfinite(r)) throw std::invalid_argument("TabularMdp: rewards must be finite");
    for (int s = 0; s < num_states_; ++s) {
        for (int a = 0; a < num_actions_; ++a) {
            const SparseRow& row = base_row(s, a);
            if (row.idx.size() != row.p.size())
                throw std::invalid_argument("TabularMdp: malformed sparse row");
            double sum = 0.0;
            for (std::size_t k = 0; k < row.p.size(); ++k) {
                if (!(row.p[k] >= 0.0))
                    throw std::invalid_argument("TabularMdp: negative transition probability in row (" +
                                                std::to_string(s) + "," + std::to_string(a) + ")");
                if (row.idx[k] < 0 || row.idx[k] >= num_states_)
                    throw std::invalid_argument("TabularMdp: transition target out of range");
                sum += row.p[k];
            }
            if (std::abs(sum - 1.0) > kRowSumTol)
                throw std::invalid_argument("TabularMdp: transition row (" + std::to_string(s) + "," +
                                            std::to_string(a) + ") sums to " + std::to_string(sum));
        }
    }
    prior_.validate();
    if (prior_.num_states != num_states_ || prior_.num_actions != num_actions_)
        throw std::invalid_argument("TabularMdp: prior has wrong shape");
    for (int s = 0; s < num_states_; ++s)
        for (int a = 0; a < num_actions_; ++a)
            if (!(prior_(s, a) > 0.0))
                throw std::invalid_argument("TabularMdp: prior must have full support");
}

TabularMdp make_random_mdp(std::uint64_t seed, int num_states, int num_actions, double mixing) {
    check_positive(num_states, "num_states");
    check_positive(num_actions, "num_actions");
    if (!(mixing > 0.0 && mixing <= 1.0))
        throw std::invalid_argument("make_random_mdp: mixing must be in (0, 1]");

    Rng rng(derive_seed(seed, 0x6d6470)); // "mdp"
    std::vector<SparseRow> rows(static_cast<std::size_t>(num_states) * num_actions);
    for (int s = 0; s < num_states; ++s) {
        for (int a = 0; a < num_actions; ++a) {
            SparseRow& row = rows[static_cast<std::size_t>(s) * num_actions + a];
            row.idx.resize(num_states);
            row.p.resize(num_states);
            double sum = 0.0;
            for (int t = 0; t < num_states; ++t) {
                row.idx[t] = t;
                double u = rng.uniform();
                while (u <= 0.0) u = rng.uniform();
                row.p[t] = -std::log(u); // Exp(1); normalizing gives Dirichlet(1,...,1)
                sum += row.p[t];
            }
            for (int t = 0; t < num_states; ++t) row.p[t] /= sum;
        }
    }
    std::vector<double> rewards(static_cast<std::size_t>(num_states) * num_actions);
    for (double& r : rewards) r = rng.uniform(-1.0, 1.0);

    return TabularMdp(num_states, num_actions, std::move(rows), mixing, std::move(rewards),
                      TabularPolicy::uniform(num_states, num_actions));
}

TabularPolicy make_random_policy(std::uint64_t seed, int num_states, int num_actions) {
    Rng rng(derive_seed(seed, 0x706f6c)); // "pol"
    TabularPolicy pol;
    pol.num_states = num_states;
    pol.num_actions = num_actions;
    pol.probs.resize(static_cast<std::size_t>(num_states) * num_actions);
    for (int s = 0; s < num_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < num_actions; ++a) {
            double u = rng.uniform();
            while (u <= 0.0) u = rng.uniform();
            pol.at(s, a) = -std::log(u);
            sum += pol.at(s, a);
        }
        for (int a = 0; a < num_actions; ++a) pol.at(s, a) /= sum;
    }
    return pol;
}

TabularMdp make_ring_mdp(int num_states, double slip) {
    check_positive(num_states, "num_states");
    if (!(slip >= 0.0 && slip < 1.0)) throw std::invalid_argument("make_ring_mdp: slip must be in [0, 1)");
    const int A = 2;
    std::vector<SparseRow> rows(static_cast<std::size_t>(num_states) * A);
    std::vector<double> rewards(static_cast<std::size_t>(num_states) * A, 0.0);
    for (int s = 0; s < num_states; ++s) {
        for (int a = 0; a < A; ++a) {
            const int target = a == 0 ? (s + 1) % num_states : (s + num_states - 1) % num_states;
            SparseRow& row = rows[static_cast<std::size_t>(s) * A + a];
            if (target == s) { // single-state ring
                row.idx = {s};
                row.p = {1.0};
            } else if (slip > 0.0) {
                row.idx = {s, target};
                row.p = {slip, 1.0 - slip};
            } else {
                row.idx = {target};
                row.p = {1.0};
            }
        }
    }
    rewards[0] = 1.0; // clockwise out of state 0
    return TabularMdp(num_states, A, std::move(rows), 0.0, std::move(rewards),
                      TabularPolicy::uniform(num_states, A));
}

namespace {

// Policy-induced state chain as a dense matrix, mixing included.
Eigen::MatrixXd policy_chain_dense(const TabularMdp& mdp, const TabularPolicy& policy) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(S, S, mdp.mixing() / S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const double w = policy(s, a) * (1.0 - mdp.mixing());
            if (w == 0.0) continue;
            const SparseRow& row = mdp.base_row(s, a);
            for (std::size_t k = 0; k < row.idx.size(); ++k) m(s, row.idx[k]) += w * row.p[k];
        }
    }
    return m;
}

// Sparse base chain (mixing excluded), transposed, as needed by the
// structured stationary solve.
Eigen::SparseMatrix<double> policy_chain_base_transposed(const TabularMdp& mdp,
                                                         const TabularPolicy& policy) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    std::vector<Eigen::Triplet<double>> trips;
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            const double w = policy(s, a);
            if (w == 0.0) continue;
            const SparseRow& row = mdp.base_row(s, a);
            for (std::size_t k = 0; k < row.idx.size(); ++k)
                trips.emplace_back(row.idx[k], s, w * row.p[k]);
        }
    }
    Eigen::SparseMatrix<double> mt(S, S);
    mt.setFromTriplets(trips.begin(), trips.end());
    return mt;
}

// Number of closed communicating classes of the support graph (Tarjan SCC,
// iterative). A unique stationary distribution exists iff exactly one.
int count_closed_classes(const TabularMdp& mdp, const TabularPolicy& policy) {
    const int S = mdp.num_states();
    if (mdp.mixing() > 0.0) return 1; // every state reaches every state
    std::vector<std::vector<int>> adj(S);
    {
        std::vector<char> seen(S);
        for (int s = 0; s < S; ++s) {
            std::fill(seen.begin(), seen.end(), 0);
            for (int a = 0; a < mdp.num_actions(); ++a) {
                if (policy(s, a) == 0.0) continue;
                const SparseRow& row = mdp.base_row(s, a);
                for (std::size_t k = 0; k < row.idx.size(); ++k)
                    if (row.p[k] > 0.0 && !seen[row.idx[k]]) {
                        seen[row.idx[k]] = 1;
                        adj[s].push_back(row.idx[k]);
                    }
            }
        }
    }
    std::vector<int> index(S, -1), low(S, 0), comp(S, -1);
    std::vector<char> on_stack(S, 0);
    std::vector<int> stack;
    int next_index = 0, num_comps = 0;
    struct Frame { int v; std::size_t child; };
    for (int root = 0; root < S; ++root) {
        if (index[root] != -1) continue;
        std::vector<Frame> call{{root, 0}};
        index[root] = low[root] = next_index++;
        stack.push_back(root);
        on_stack[root] = 1;
        while (!call.empty()) {
            Frame& f = call.back();
            if (f.child < adj[f.v].size()) {
                const int w = adj[f.v][f.child++];
                if (index[w] == -1) {
                    index[w] = low[w] = next_index++;
                    stack.push_back(w);
                    on_stack[w] = 1;
                    call.push_back({w, 0});
                } else if (on_stack[w]) {
                    low[f.v] = std::min(low[f.v], index[w]);
                }
            } else {
                if (low[f.v] == index[f.v]) {
                    while (true) {
                        const int w = stack.back();
                        stack.pop_back();
                        on_stack[w] = 0;
                        comp[w] = num_comps;
                        if (w == f.v) break;
                    }
                    ++num_comps;
                }
                const int v = f.v;
                call.pop_back();
                if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
            }
        }
    }
    // A class is closed when no edge leaves it.
    std::vector<char> closed(num_comps, 1);
    for (int s = 0; s < S; ++s)
        for (int w : adj[s])
            if (comp[w] != comp[s]) closed[comp[s]] = 0;
    int n = 0;
    for (char c : closed) n += c;
    return n;
}

double stationary_residual(const Eigen::MatrixXd& m, const Eigen::VectorXd& d) {
    return (m.transpose() * d - d).lpNorm<Eigen::Infinity>();
}

} // namespace

StationaryDistribution stationary_distribution(const TabularMdp& mdp, const TabularPolicy& policy) {
    const int S = mdp.num_states();
    policy.validate();
    if (policy.num_states != S || policy.num_actions != mdp.num_actions())
        throw std::invalid_argument("stationary_distribution: policy has wrong shape");

    if (count_closed_classes(mdp, policy) != 1)
        throw StructuralError("stationary_distribution: chain has multiple closed classes (reducible)");

    Eigen::VectorXd d;
    constexpr int kDenseLimit = 1024;
    if (mdp.mixing() > 0.0 && S > kDenseLimit) {
        // ((1-eps) M_b^T - I) d = -(eps/S) 1, nonsingular since rho((1-eps)M_b) < 1.
        Eigen::SparseMatrix<double> a = policy_chain_base_transposed(mdp, policy);
        a *= (1.0 - mdp.mixing());
        Eigen::SparseMatrix<double> eye(S, S);
        eye.setIdentity();
        a = a - eye;
        a.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(a);
        if (lu.info() != Eigen::Success)
            throw StructuralError("stationary_distribution: sparse factorization failed");
        d = lu.solve(Eigen::VectorXd::Constant(S, -mdp.mixing() / S));
    } else {
        // (M^T - I) d = 0 with the normalization row appended, least squares.
        const Eigen::MatrixXd m = policy_chain_dense(mdp, policy);
        Eigen::MatrixXd a(S + 1, S);
        a.topRows(S) = m.transpose() - Eigen::MatrixXd::Identity(S, S);
        a.bottomRows(1).setOnes();
        Eigen::VectorXd b = Eigen::VectorXd::Zero(S + 1);
        b(S) = 1.0;
        d = a.colPivHouseholderQr().solve(b);
        if (stationary_residual(m, d) > kStationaryTol || d.minCoeff() < -kStationaryTol) {
            // Damped power iteration; damping keeps periodic unichains convergent.
            Eigen::VectorXd x = Eigen::VectorXd::Constant(S, 1.0 / S);
            bool ok = false;
            for (long it = 0; it < 1000000; ++it) {
                Eigen::VectorXd next = 0.5 * x + 0.5 * (m.transpose() * x);
                next /= next.sum();
                const double delta = (next - x).lpNorm<Eigen::Infinity>();
                x = next;
                if (delta < 1e-14) {
                    ok = true;
                    break;
                }
            }
            if (!ok)
                throw StructuralError("stationary_distribution: power iteration did not converge");
            d = x;
        }
    }

    // Scrub solver round-off.
    for (int i = 0; i < S; ++i)
        if (d(i) < 0.0) d(i) = 0.0;
    d /= d.sum();

    StationaryDistribution out;
    out.d.assign(d.data(), d.data() + S);
    return out;
}

double kl_divergence(const TabularPolicy& policy, const TabularPolicy& prior, int state) {
    if (state < 0 || state >= policy.num_states)
        throw std::invalid_argument("kl_divergence: state out of range");
    double kl = 0.0;
    for (int a = 0; a < policy.num_actions; ++a) {
        const double p = policy(state, a);
        if (p == 0.0) continue; // 0 log 0 = 0
        const double q = prior(state, a);
        if (q == 0.0)
            throw DivergenceError("kl_divergence: policy mass outside prior support at state " +
                                  std::to_string(state) + ", action " + std::to_string(a));
        kl += p * std::log(p / q);
    }
    return kl;
}

double reward_rate(const TabularMdp& mdp, const TabularPolicy& policy, double inv_temperature,
                   bool entropy_on) {
    if (entropy_on && !(inv_temperature > 0.0))
        throw std::invalid_argument("reward_rate: inv_temperature must be > 0");
    const StationaryDistribution sd = stationary_distribution(mdp, policy);
    double rate = 0.0;
    for (int s = 0; s < mdp.num_states(); ++s) {
        double per_state = 0.0;
        for (int a = 0; a < mdp.num_actions(); ++a) per_state += policy(s, a) * mdp.reward(s, a);
        if (entropy_on) per_state -= kl_divergence(policy, mdp.prior(), s) / inv_temperature;
        rate += sd.d[s] * per_state;
    }
    return rate;
}

double empirical_reward_rate(const TabularMdp& mdp, const TabularPolicy& policy,
                             double inv_temperature, long horizon, std::uint64_t seed,
                             int start_state) {
    if (horizon < 1) throw std::invalid_argument("empirical_reward_rate: horizon must be >= 1");
    if (!(inv_temperature > 0.0))
        throw std::invalid_argument("empirical_reward_rate: inv_temperature must be > 0");
    if (start_state >= mdp.num_states())
        throw std::invalid_argument("empirical_reward_rate: start_state out of range");

    Rng rng(derive_seed(seed, 0x726f6c6c)); // "roll"
    int s = start_state >= 0 ? start_state : rng.uniform_int(mdp.num_states());
    double total = 0.0;
    for (long t = 0; t < horizon; ++t) {
        const int a = rng.categorical(policy.row(s));
        const double p = policy(s, a);
        const double q = mdp.prior()(s, a);
        if (q == 0.0) throw DivergenceError("empirical_reward_rate: sampled action outside prior support");
        total += mdp.reward(s, a) - std::log(p / q) / inv_temperature;
        s = mdp.sample_next(s, a, rng);
    }
    return total / static_cast<double>(horizon);
}

} // namespace erar
