#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "erar/rng.hpp"

namespace erar {

/// Fully-connected network, tanh on hidden layers, identity output. Parameters
/// live in one flat array (per layer: weight column-major, then bias) so the
/// optimizer, Polyak averaging, clipping and checkpointing all operate on
/// plain spans. Storage is 64-byte aligned and each layer block is padded to
/// an 8-double boundary: every Eigen view then has the same alignment in
/// every instance, which keeps training bitwise reproducible across
/// checkpoint resume (SIMD reduction order would otherwise depend on the
/// heap address).
class Mlp {
public:
    using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

    Mlp() = default;
    explicit Mlp(std::vector<int> layer_sizes); // zero-initialized

    /// Uniform fan-in init: each layer's entries drawn from
    /// U(-1/sqrt(n_in), 1/sqrt(n_in)) in parameter order.
    static Mlp random_init(std::vector<int> layer_sizes, Rng& rng);

    const std::vector<int>& layer_sizes() const { return sizes_; }
    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }

    /// Logical parameter count: sum over layers of (n_in + 1) * n_out.
    std::size_t param_count() const { return logical_count_; }

    /// Raw storage including the alignment padding (pad entries stay zero);
    /// gradients, the optimizer and checkpoints use this span.
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
    Eigen::Map<Eigen::MatrixXd> weight(int layer);
    Eigen::Map<Eigen::VectorXd> bias(int layer);

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;

    /// Columns are samples.
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& input) const;

    struct Cache {
        std::vector<Eigen::MatrixXd> act; // act[0] = input, act[l] = layer l output
    };
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& input, Cache& cache) const;

    /// Reverse-mode pass for the scalar sum_j output(:,j) . out_grad(:,j).
    /// Accumulates parameter gradients into `grad` (sized like params) and
    /// returns the gradient with respect to the input batch.
    Eigen::MatrixXd backward_batch(const Cache& cache, const Eigen::MatrixXd& out_grad,
                                   std::span<double> grad) const;

private:
    using WMap = Eigen::Map<Eigen::MatrixXd>;
    using WConstMap = Eigen::Map<const Eigen::MatrixXd>;
    using BMap = Eigen::Map<Eigen::VectorXd>;
    using BConstMap = Eigen::Map<const Eigen::VectorXd>;

    static WMap weight_in(std::span<double> flat, const std::vector<int>& sizes,
                          const std::vector<std::size_t>& offsets, int layer);
    static BMap bias_in(std::span<double> flat, const std::vector<int>& sizes,
                        const std::vector<std::size_t>& offsets, int layer);

    std::vector<int> sizes_;
    std::vector<std::size_t> offsets_; // per layer, start of [W|b] block (8-double aligned)
    std::size_t logical_count_ = 0;
    AlignedVector params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a flat parameter array.
class AdamState {
public:
    AdamState() = default;
    AdamState(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return step_; }
    std::span<const double> first_moment() const { return m_; }
    std::span<const double> second_moment() const { return v_; }

    /// One update; throws NumericError if any gradient entry is non-finite.
    void step(std::span<double> params, std::span<const double> grads);

    /// Raw state access for checkpointing.
    void restore(long step, std::vector<double> m, std::vector<double> v);

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    long step_ = 0;
};

/// target <- tau * online + (1 - tau) * target, elementwise.
void polyak_update(std::span<double> target, std::span<const double> online, double tau);

/// Scales `grads` in place to global L2 norm max_norm when above it; returns
/// the pre-clip norm.
double clip_grad_norm(std::span<double> grads, double max_norm);

/// Squashed-Gaussian policy head over a network output laid out as
/// [mean_0..mean_{d-1}, log_std_raw_0..log_std_raw_{d-1}]. Raw log-stds are
/// clamped to [log_std_min, log_std_max]; actions are tanh(mean + std * noise)
/// and the log-density carries the change-of-variables correction
/// -sum_d log(1 - action_d^2 + squash_eps).
struct GaussianHead {
    int action_dim = 1;
    double log_std_min = -20.0;
    double log_std_max = 2.0;
    double squash_eps = 1e-6;

    struct Sample {
        Eigen::VectorXd action;    // in (-1, 1)^d
        Eigen::VectorXd pre_squash;
        double log_prob = 0.0;
    };

    double clamp_log_std(double raw) const {
        return raw < log_std_min ? log_std_min : (raw > log_std_max ? log_std_max : raw);
    }

    Sample sample(const Eigen::VectorXd& net_output, const Eigen::VectorXd& noise) const;

    /// Log-density of an already-squashed action under the head's current
    /// parameters (stored replay actions); the action is pulled back through
    /// atanh with a clamp at 1 - 1e-12.
    double log_prob(const Eigen::VectorXd& net_output, const Eigen::VectorXd& action) const;

    /// Total derivatives of log pi(a|s) and of the action at a reparameterized
    /// sample, with the noise held fixed; the clamp zeroes d/d(log_std_raw)
    /// where it saturates.
    struct PathGrads {
        Eigen::VectorXd dlogp_dmean, dlogp_dlogstd; // per action dim
        Eigen::VectorXd daction_dmean, daction_dlogstd;
    };
    PathGrads path_grads(const Eigen::VectorXd& net_output, const Eigen::VectorXd& noise) const;

    // Batched variants (columns = samples) used by the trainer's hot paths.
    struct BatchSample {
        Eigen::MatrixXd action;     // d x b
        Eigen::MatrixXd pre_squash; // d x b
        Eigen::VectorXd log_prob;   // b
    };
    BatchSample sample_batch(const Eigen::MatrixXd& net_output, const Eigen::MatrixXd& noise) const;
    Eigen::VectorXd log_prob_batch(const Eigen::MatrixXd& net_output,
                                   const Eigen::MatrixXd& actions) const;
    struct BatchPathGrads {
        Eigen::MatrixXd dlogp_dmean, dlogp_dlogstd;     // d x b
        Eigen::MatrixXd daction_dmean, daction_dlogstd; // d x b
    };
    BatchPathGrads path_grads_batch(const Eigen::MatrixXd& net_output,
                                    const Eigen::MatrixXd& noise) const;
};

/// Prior policy density over continuous actions in (-1,1)^d.
class ActionPrior {
public:
    enum class Kind { Uniform, SquashedGaussian };

    ActionPrior() = default;
    ActionPrior(Kind kind, int dim) : kind_(kind), dim_(dim) {}

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }

    double log_density(const Eigen::VectorXd& action) const;

    /// d log pi0(a) / da; zero for the uniform prior.
    Eigen::VectorXd dlogp_daction(const Eigen::VectorXd& action) const;

    /// Batched log-densities (columns = actions).
    Eigen::VectorXd log_density_batch(const Eigen::MatrixXd& actions) const;
    Eigen::MatrixXd dlogp_daction_batch(const Eigen::MatrixXd& actions) const;

private:
    Kind kind_ = Kind::Uniform;
    int dim_ = 1;
};

} // namespace erar
