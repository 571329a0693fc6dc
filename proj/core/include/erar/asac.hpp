#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "erar/envs.hpp"
#include "erar/nn.hpp"
#include "erar/rng.hpp"

namespace erar {

struct Transition {
    std::vector<double> state;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_state; // the reset observation when terminated
    bool terminated = false;        // true environment termination only
};

/// Bounded FIFO store with uniform sampling (with replacement); eviction is
/// strictly oldest-first.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return full_ ? capacity_ : next_; }
    void push(Transition t);
    const Transition& sample(Rng& rng) const;
    const Transition& slot(std::size_t i) const { return data_[i]; } // raw ring order

    // Checkpoint access.
    std::size_t cursor() const { return next_; }
    bool full() const { return full_; }
    void restore(std::vector<Transition> data, std::size_t cursor, bool full);

private:
    std::size_t capacity_;
    std::vector<Transition> data_;
    std::size_t next_ = 0;
    bool full_ = false;
};

/// Every hyperparameter of the training loop. Field names double as the
/// config-file keys.
struct TrainerConfig {
    double inv_temperature = 5.0; // beta
    double lr_actor = 1e-4;
    double lr_critic = 5e-4;
    double lr_theta = 5e-3;
    double polyak = 0.005; // tau
    int batch_size = 256;
    std::size_t buffer_capacity = 1000000;
    double reset_scale = 10.0; // p0
    double grad_clip = 10.0;   // critic gradients only
    std::vector<double> anchor_state;  // empty: zero vector
    std::vector<double> anchor_action; // empty: zero vector
    int train_freq = 1;
    int gradient_steps = 1;
    std::uint64_t seed = 0;
    long total_steps = 0;
    long eval_interval = 5000;

    std::string env = "pendulum";
    std::vector<int> hidden = {64, 64};
    std::string prior = "uniform"; // or "gaussian"
    bool penalty_all_rewards = false; // pseudocode variant: average all batch rewards
    int target_action_samples = 1;
    long learning_starts = 1000; // uniform actions, no updates, before this step
    int eval_episodes = 10;
    long eval_episode_len = 1000;

    void validate() const;
};

/// Everything Algorithm 1 mutates.
struct TrainerState {
    Mlp actor;
    Mlp critic1, critic2;
    Mlp target1, target2;
    AdamState opt_actor, opt_critic1, opt_critic2, opt_theta;
    double theta = 0.0;
    double reset_penalty = 0.0;
    long env_steps = 0;
    long reset_count = 0;
    ReplayBuffer buffer{1};
};

/// Q(state, action) - Q(anchor_state, anchor_action), both through `critic`.
double centered_q(const Mlp& critic, std::span<const double> state,
                  std::span<const double> action, std::span<const double> anchor_state,
                  std::span<const double> anchor_action);

/// min over the two critics of their centered values.
double pessimistic_q(std::span<const double> state, std::span<const double> action,
                     const Mlp& critic_a, const Mlp& critic_b,
                     std::span<const double> anchor_state, std::span<const double> anchor_action);

struct EvalResult {
    double mean_return = 0.0;
    double stderr_return = 0.0;
    double mean_rate = 0.0; // per-step unregularized reward
    int episodes = 0;
};

/// Rolls `episodes` episodes of up to `episode_len` steps; `stochastic`
/// samples from the squashed Gaussian, otherwise plays tanh(mean).
EvalResult evaluate(const Mlp& actor, const GaussianHead& head, Env& env, int episodes,
                    long episode_len, std::uint64_t seed, bool stochastic = true);

struct TrainLogRow {
    long step = 0;
    double theta = 0.0;
    double critic_loss = 0.0;
    double actor_loss = 0.0;
    double theta_loss = 0.0;
    double reset_penalty = 0.0;
    double eval_return = 0.0;
    double eval_rate = 0.0;
    long wall_ms = 0;
};

/// Header of the training-log CSV.
extern const char* const kTrainCsvHeader;
std::string format_csv_row(const TrainLogRow& row);

class Trainer {
public:
    Trainer(std::unique_ptr<Env> env, TrainerConfig config);

    const TrainerConfig& config() const { return config_; }
    const TrainerState& state() const { return state_; }

    /// Extend (or shorten) the training horizon; train() runs until
    /// env_steps reaches this. Used when resuming from a checkpoint.
    void set_total_steps(long steps) { config_.total_steps = steps; }
    const GaussianHead& head() const { return head_; }
    const ActionPrior& prior() const { return prior_; }
    const Env& env() const { return *env_; }
    std::span<const double> anchor_state() const { return anchor_state_; }
    std::span<const double> anchor_action() const { return anchor_action_; }

    using Batch = std::vector<const Transition*>;
    Batch sample_batch();

    /// Target values y for one batch; consumes the trainer RNG stream for the
    /// next-action samples. No gradient flows through the result.
    std::vector<double> critic_target(const Batch& batch);

    /// MSE of both centered critics against shared targets; one clipped Adam
    /// step each. Returns the mean of the two losses.
    double critic_update(const Batch& batch, const std::vector<double>& targets);

    /// Reparameterized KL-vs-Boltzmann loss; one Adam step on the actor.
    double actor_update(const Batch& batch);

    /// One Adam step of theta toward the batch-mean rate target.
    double theta_update(const Batch& batch);

    /// Rolling-average reset penalty from the batch's (non-terminal, unless
    /// configured otherwise) rewards. Returns the updated penalty.
    double update_reset_penalty(const Batch& batch);

    void polyak_targets();

    /// Full loop. Writes one CSV row (and runs an evaluation) every
    /// eval_interval env steps; returns all rows.
    std::vector<TrainLogRow> train(std::ostream* csv = nullptr);

    EvalResult run_evaluation(std::uint64_t stream) const;

    void save_checkpoint(const std::string& path) const;
    static Trainer load_checkpoint(const std::string& path);

    /// Loss-and-gradient hooks behind the update steps. With an empty grad
    /// span they evaluate the loss only; noise columns are batch samples.
    /// Gradients are unclipped. The updates and the finite-difference checks
    /// share these paths.
    double actor_loss_grad(const Batch& batch, const Eigen::MatrixXd& noise,
                           std::span<double> grad_out) const;
    double critic_loss_grad(const Mlp& critic, const Batch& batch,
                            const std::vector<double>& targets,
                            std::span<double> grad_out) const;
    double theta_target_only(const Batch& batch) const;

    /// Mutable access for tests and checkpoint plumbing.
    TrainerState& mutable_state() { return state_; }

private:
    friend struct TrainerCheckpointAccess;

    Eigen::MatrixXd stack_inputs(const Batch& batch, bool next_states) const;
    double anchor_value(const Mlp& critic) const;

    std::unique_ptr<Env> env_;
    TrainerConfig config_;
    GaussianHead head_;
    ActionPrior prior_;
    std::vector<double> anchor_state_, anchor_action_;
    Eigen::VectorXd anchor_input_;
    TrainerState state_;
    Rng rng_{0};
    std::vector<double> obs_;
    double last_critic_loss_ = 0.0, last_actor_loss_ = 0.0, last_theta_loss_ = 0.0;
};

} // namespace erar
