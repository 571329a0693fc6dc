#include "erar/asac.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "erar/errors.hpp"

namespace erar {

namespace {

// RNG stream ids hung off TrainerConfig::seed. The trainer stream is consumed
// in a fixed documented order: action noise (per step: dim-major per sample),
// then per gradient step batch indices, target-action noise, actor noise.
constexpr std::uint64_t kStreamTrainer = 1;
constexpr std::uint64_t kStreamInit = 2;
constexpr std::uint64_t kStreamReset = 1000000;
constexpr std::uint64_t kStreamEval = 2000000000;

void check_rate(double v, const char* name) {
    if (!(v > 0.0 && v < 1.0))
        throw std::invalid_argument(std::string("TrainerConfig: ") + name + " must be in (0, 1)");
}

} // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
    data_.reserve(std::min<std::size_t>(capacity_, 1 << 20));
}

void ReplayBuffer::push(Transition t) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
        next_ = data_.size() % capacity_;
        full_ = data_.size() == capacity_ && next_ == 0;
    } else {
        data_[next_] = std::move(t);
        next_ = (next_ + 1) % capacity_;
        full_ = true;
    }
}

const Transition& ReplayBuffer::sample(Rng& rng) const {
    if (data_.empty()) throw std::invalid_argument("ReplayBuffer: cannot sample from empty buffer");
    return data_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(size())))];
}

void ReplayBuffer::restore(std::vector<Transition> data, std::size_t cursor, bool full) {
    if (data.size() > capacity_) throw std::invalid_argument("ReplayBuffer::restore: too many items");
    data_ = std::move(data);
    next_ = cursor;
    full_ = full;
}

void TrainerConfig::validate() const {
    if (!(inv_temperature > 0.0))
        throw std::invalid_argument("TrainerConfig: inv_temperature must be > 0");
    check_rate(lr_actor, "lr_actor");
    check_rate(lr_critic, "lr_critic");
    check_rate(lr_theta, "lr_theta");
    check_rate(polyak, "polyak");
    if (batch_size < 1) throw std::invalid_argument("TrainerConfig: batch_size must be >= 1");
    if (buffer_capacity < 1) throw std::invalid_argument("TrainerConfig: buffer_capacity must be >= 1");
    if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainerConfig: grad_clip must be > 0");
    if (train_freq < 1 || gradient_steps < 1)
        throw std::invalid_argument("TrainerConfig: train_freq and gradient_steps must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("TrainerConfig: total_steps must be >= 0");
    if (eval_interval < 1) throw std::invalid_argument("TrainerConfig: eval_interval must be >= 1");
    if (target_action_samples < 1)
        throw std::invalid_argument("TrainerConfig: target_action_samples must be >= 1");
    if (learning_starts < 0) throw std::invalid_argument("TrainerConfig: learning_starts must be >= 0");
    if (eval_episodes < 1 || eval_episode_len < 1)
        throw std::invalid_argument("TrainerConfig: eval episodes/length must be >= 1");
    if (hidden.empty()) throw std::invalid_argument("TrainerConfig: hidden layers must be nonempty");
    if (prior != "uniform" && prior != "gaussian")
        throw std::invalid_argument("TrainerConfig: prior must be 'uniform' or 'gaussian'");
}

double centered_q(const Mlp& critic, std::span<const double> state, std::span<const double> action,
                  std::span<const double> anchor_state, std::span<const double> anchor_action) {
    const auto dim = state.size() + action.size();
    if (anchor_state.size() + anchor_action.size() != dim)
        throw std::invalid_argument("centered_q: anchor dimensions mismatch");
    Eigen::MatrixXd in(dim, 2);
    for (std::size_t i = 0; i < state.size(); ++i) in(i, 0) = state[i];
    for (std::size_t i = 0; i < action.size(); ++i) in(state.size() + i, 0) = action[i];
    for (std::size_t i = 0; i < anchor_state.size(); ++i) in(i, 1) = anchor_state[i];
    for (std::size_t i = 0; i < anchor_action.size(); ++i)
        in(anchor_state.size() + i, 1) = anchor_action[i];
    const Eigen::MatrixXd out = critic.forward_batch(in);
    return out(0, 0) - out(0, 1);
}

double pessimistic_q(std::span<const double> state, std::span<const double> action,
                     const Mlp& critic_a, const Mlp& critic_b,
                     std::span<const double> anchor_state, std::span<const double> anchor_action) {
    return std::min(centered_q(critic_a, state, action, anchor_state, anchor_action),
                    centered_q(critic_b, state, action, anchor_state, anchor_action));
}

EvalResult evaluate(const Mlp& actor, const GaussianHead& head, Env& env, int episodes,
                    long episode_len, std::uint64_t seed, bool stochastic) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    if (episode_len < 1) throw std::invalid_argument("evaluate: episode_len must be >= 1");

    std::vector<double> returns(episodes, 0.0);
    double total_reward = 0.0;
    long total_steps = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        std::vector<double> obs = env.reset(derive_seed(seed, static_cast<std::uint64_t>(ep)));
        Rng noise_rng(derive_seed(seed, 500000 + static_cast<std::uint64_t>(ep)));
        double ep_return = 0.0;
        for (long t = 0; t < episode_len; ++t) {
            const Eigen::VectorXd out =
                actor.forward(Eigen::Map<const Eigen::VectorXd>(obs.data(), obs.size()));
            Eigen::VectorXd action(head.action_dim);
            if (stochastic) {
                Eigen::VectorXd noise(head.action_dim);
                for (int d = 0; d < head.action_dim; ++d) noise(d) = noise_rng.normal();
                action = head.sample(out, noise).action;
            } else {
                for (int d = 0; d < head.action_dim; ++d) action(d) = std::tanh(out(d));
            }
            const StepResult sr = env.step(std::span<const double>(action.data(), action.size()));
            ep_return += sr.reward;
            ++total_steps;
            obs = sr.obs;
            if (sr.terminated) break;
        }
        returns[ep] = ep_return;
        total_reward += ep_return;
    }

    EvalResult res;
    res.episodes = episodes;
    res.mean_return = total_reward / episodes;
    res.mean_rate = total_reward / static_cast<double>(total_steps);
    if (episodes > 1) {
        double ss = 0.0;
        for (double r : returns) ss += (r - res.mean_return) * (r - res.mean_return);
        res.stderr_return = std::sqrt(ss / (episodes - 1)) / std::sqrt(static_cast<double>(episodes));
    }
    return res;
}

const char* const kTrainCsvHeader =
    "step,theta,critic_loss,actor_loss,theta_loss,reset_penalty,eval_return,eval_rate,wall_ms";

std::string format_csv_row(const TrainLogRow& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%ld", r.step, r.theta,
                  r.critic_loss, r.actor_loss, r.theta_loss, r.reset_penalty, r.eval_return,
                  r.eval_rate, r.wall_ms);
    return buf;
}

Trainer::Trainer(std::unique_ptr<Env> env, TrainerConfig config)
    : env_(std::move(env)), config_(std::move(config)), rng_(0) {
    if (!env_) throw std::invalid_argument("Trainer: null environment");
    config_.validate();

    const EnvSpec& spec = env_->spec();
    head_.action_dim = spec.action_dim;
    prior_ = ActionPrior(config_.prior == "gaussian" ? ActionPrior::Kind::SquashedGaussian
                                                     : ActionPrior::Kind::Uniform,
                         spec.action_dim);

    anchor_state_ = config_.anchor_state.empty()
                        ? std::vector<double>(static_cast<std::size_t>(spec.obs_dim), 0.0)
                        : config_.anchor_state;
    anchor_action_ = config_.anchor_action.empty()
                         ? std::vector<double>(static_cast<std::size_t>(spec.action_dim), 0.0)
                         : config_.anchor_action;
    if (static_cast<int>(anchor_state_.size()) != spec.obs_dim ||
        static_cast<int>(anchor_action_.size()) != spec.action_dim)
        throw std::invalid_argument("Trainer: anchor dimensions do not match the environment");
    anchor_input_.resize(spec.obs_dim + spec.action_dim);
    for (int i = 0; i < spec.obs_dim; ++i) anchor_input_(i) = anchor_state_[i];
    for (int i = 0; i < spec.action_dim; ++i) anchor_input_(spec.obs_dim + i) = anchor_action_[i];

    std::vector<int> actor_sizes{spec.obs_dim};
    std::vector<int> critic_sizes{spec.obs_dim + spec.action_dim};
    for (int h : config_.hidden) {
        actor_sizes.push_back(h);
        critic_sizes.push_back(h);
    }
    actor_sizes.push_back(2 * spec.action_dim);
    critic_sizes.push_back(1);

    Rng init_rng(derive_seed(config_.seed, kStreamInit));
    state_.actor = Mlp::random_init(actor_sizes, init_rng);
    state_.critic1 = Mlp::random_init(critic_sizes, init_rng);
    state_.critic2 = Mlp::random_init(critic_sizes, init_rng);
    state_.target1 = state_.critic1;
    state_.target2 = state_.critic2;
    state_.opt_actor = AdamState(state_.actor.params().size(), {.lr = config_.lr_actor});
    state_.opt_critic1 = AdamState(state_.critic1.params().size(), {.lr = config_.lr_critic});
    state_.opt_critic2 = AdamState(state_.critic2.params().size(), {.lr = config_.lr_critic});
    state_.opt_theta = AdamState(1, {.lr = config_.lr_theta});
    state_.theta = 0.0;
    state_.reset_penalty = 0.0;
    state_.buffer = ReplayBuffer(config_.buffer_capacity);

    rng_ = Rng(derive_seed(config_.seed, kStreamTrainer));
    obs_ = env_->reset(derive_seed(config_.seed, kStreamReset));
    state_.reset_count = 1;
}

Trainer::Batch Trainer::sample_batch() {
    Batch batch;
    batch.reserve(config_.batch_size);
    for (int i = 0; i < config_.batch_size; ++i) batch.push_back(&state_.buffer.sample(rng_));
    return batch;
}

Eigen::MatrixXd Trainer::stack_inputs(const Batch& batch, bool next_states) const {
    const int obs_dim = env_->spec().obs_dim;
    const int act_dim = env_->spec().action_dim;
    const int rows = next_states ? obs_dim : obs_dim + act_dim;
    Eigen::MatrixXd x(rows, batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::vector<double>& s = next_states ? batch[i]->next_state : batch[i]->state;
        for (int r = 0; r < obs_dim; ++r) x(r, i) = s[r];
        if (!next_states)
            for (int r = 0; r < act_dim; ++r) x(obs_dim + r, i) = batch[i]->action[r];
    }
    return x;
}

double Trainer::anchor_value(const Mlp& critic) const {
    return critic.forward(anchor_input_)(0);
}

std::vector<double> Trainer::critic_target(const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("critic_target: empty batch");
    const int b = static_cast<int>(batch.size());
    const int obs_dim = env_->spec().obs_dim;
    const int act_dim = env_->spec().action_dim;
    const double beta = config_.inv_temperature;

    Eigen::MatrixXd next_obs(obs_dim, b);
    for (int i = 0; i < b; ++i)
        for (int r = 0; r < obs_dim; ++r) next_obs(r, i) = batch[i]->next_state[r];
    const Eigen::MatrixXd actor_out = state_.actor.forward_batch(next_obs);

    const double a1 = anchor_value(state_.target1);
    const double a2 = anchor_value(state_.target2);

    std::vector<double> bracket(static_cast<std::size_t>(b), 0.0);
    Eigen::MatrixXd critic_in(obs_dim + act_dim, b);
    critic_in.topRows(obs_dim) = next_obs;
    Eigen::MatrixXd noise(act_dim, b);
    for (int k = 0; k < config_.target_action_samples; ++k) {
        for (int i = 0; i < b; ++i)
            for (int d = 0; d < act_dim; ++d) noise(d, i) = rng_.normal();
        const GaussianHead::BatchSample hb = head_.sample_batch(actor_out, noise);
        critic_in.bottomRows(act_dim) = hb.action;
        const Eigen::MatrixXd q1 = state_.target1.forward_batch(critic_in);
        const Eigen::MatrixXd q2 = state_.target2.forward_batch(critic_in);
        const Eigen::VectorXd logratio = hb.log_prob - prior_.log_density_batch(hb.action);
        for (int i = 0; i < b; ++i)
            bracket[i] += std::min(q1(0, i) - a1, q2(0, i) - a2) - logratio(i) / beta;
    }

    std::vector<double> y(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        const double r = batch[i]->reward - (batch[i]->terminated ? state_.reset_penalty : 0.0);
        y[i] = r - state_.theta + bracket[i] / config_.target_action_samples;
        if (!std::isfinite(y[i])) throw NumericError("critic_target: non-finite target");
    }
    return y;
}

double Trainer::critic_loss_grad(const Mlp& critic, const Batch& batch,
                                 const std::vector<double>& targets,
                                 std::span<double> grad_out) const {
    if (batch.size() != targets.size())
        throw std::invalid_argument("critic_loss_grad: batch/target size mismatch");
    const int b = static_cast<int>(batch.size());
    const Eigen::MatrixXd x = stack_inputs(batch, false);
    Mlp::Cache cache, anchor_cache;
    const Eigen::MatrixXd q = critic.forward_batch(x, cache);
    const Eigen::MatrixXd qa = critic.forward_batch(anchor_input_, anchor_cache);

    Eigen::MatrixXd out_grad(1, b);
    double loss = 0.0;
    double anchor_grad = 0.0;
    for (int i = 0; i < b; ++i) {
        const double r = (q(0, i) - qa(0, 0)) - targets[static_cast<std::size_t>(i)];
        loss += r * r;
        out_grad(0, i) = 2.0 * r / b;
        anchor_grad -= 2.0 * r / b;
    }
    loss /= b;
    if (!std::isfinite(loss)) throw NumericError("critic_update: non-finite loss");
    if (grad_out.empty()) return loss;
    critic.backward_batch(cache, out_grad, grad_out);
    critic.backward_batch(anchor_cache, Eigen::MatrixXd::Constant(1, 1, anchor_grad), grad_out);
    return loss;
}

double Trainer::critic_update(const Batch& batch, const std::vector<double>& targets) {
    double loss_sum = 0.0;
    Mlp* critics[2] = {&state_.critic1, &state_.critic2};
    AdamState* opts[2] = {&state_.opt_critic1, &state_.opt_critic2};
    for (int j = 0; j < 2; ++j) {
        Mlp& net = *critics[j];
        Mlp::AlignedVector grad(net.params().size(), 0.0);
        loss_sum += critic_loss_grad(net, batch, targets, grad);
        clip_grad_norm(grad, config_.grad_clip);
        opts[j]->step(net.params(), grad);
    }
    last_critic_loss_ = loss_sum / 2.0;
    return last_critic_loss_;
}

double Trainer::actor_loss_grad(const Batch& batch, const Eigen::MatrixXd& noise,
                                std::span<double> grad_out) const {
    const int b = static_cast<int>(batch.size());
    const int obs_dim = env_->spec().obs_dim;
    const int act_dim = env_->spec().action_dim;
    const double beta = config_.inv_temperature;

    Eigen::MatrixXd states(obs_dim, b);
    for (int i = 0; i < b; ++i)
        for (int r = 0; r < obs_dim; ++r) states(r, i) = batch[i]->state[r];

    Mlp::Cache actor_cache;
    const Eigen::MatrixXd actor_out = state_.actor.forward_batch(states, actor_cache);
    const GaussianHead::BatchSample hb = head_.sample_batch(actor_out, noise);
    const Eigen::VectorXd logp0 = prior_.log_density_batch(hb.action);

    Eigen::MatrixXd critic_in(obs_dim + act_dim, b);
    critic_in.topRows(obs_dim) = states;
    critic_in.bottomRows(act_dim) = hb.action;
    Mlp::Cache c1, c2;
    const Eigen::MatrixXd q1 = state_.critic1.forward_batch(critic_in, c1);
    const Eigen::MatrixXd q2 = state_.critic2.forward_batch(critic_in, c2);
    const double anchor1 = anchor_value(state_.critic1);
    const double anchor2 = anchor_value(state_.critic2);

    // The Boltzmann target of the improvement theorem is pi0 exp(beta Q), so
    // the KL objective expands to log(pi/pi0) - beta Q.
    double loss = 0.0;
    Eigen::MatrixXd pick1(1, b), pick2(1, b);
    for (int i = 0; i < b; ++i) {
        const double cq1 = q1(0, i) - anchor1;
        const double cq2 = q2(0, i) - anchor2;
        const bool first = cq1 <= cq2;
        loss += hb.log_prob(i) - logp0(i) - beta * std::min(cq1, cq2);
        pick1(0, i) = first ? -beta / b : 0.0;
        pick2(0, i) = first ? 0.0 : -beta / b;
    }
    loss /= b;
    if (!std::isfinite(loss)) throw NumericError("actor_update: non-finite loss");
    if (grad_out.empty()) return loss;

    // dL/da through the chosen online critic's input; critic parameters get
    // nothing (scratch buffers are discarded).
    Mlp::AlignedVector scratch1(state_.critic1.params().size(), 0.0);
    Mlp::AlignedVector scratch2(state_.critic2.params().size(), 0.0);
    const Eigen::MatrixXd gin1 = state_.critic1.backward_batch(c1, pick1, scratch1);
    const Eigen::MatrixXd gin2 = state_.critic2.backward_batch(c2, pick2, scratch2);
    Eigen::MatrixXd dl_da = gin1.bottomRows(act_dim) + gin2.bottomRows(act_dim);
    dl_da -= prior_.dlogp_daction_batch(hb.action) / b;

    const GaussianHead::BatchPathGrads pg = head_.path_grads_batch(actor_out, noise);
    Eigen::MatrixXd out_grad(2 * act_dim, b);
    out_grad.topRows(act_dim) = pg.dlogp_dmean / b + dl_da.cwiseProduct(pg.daction_dmean);
    out_grad.bottomRows(act_dim) =
        pg.dlogp_dlogstd / b + dl_da.cwiseProduct(pg.daction_dlogstd);
    state_.actor.backward_batch(actor_cache, out_grad, grad_out);
    return loss;
}

double Trainer::actor_update(const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("actor_update: empty batch");
    const int act_dim = env_->spec().action_dim;
    Eigen::MatrixXd noise(act_dim, batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (int d = 0; d < act_dim; ++d) noise(d, i) = rng_.normal();
    Mlp::AlignedVector grad(state_.actor.params().size(), 0.0);
    const double loss = actor_loss_grad(batch, noise, grad);
    state_.opt_actor.step(state_.actor.params(), grad);
    last_actor_loss_ = loss;
    return loss;
}

double Trainer::theta_target_only(const Batch& batch) const {
    const int b = static_cast<int>(batch.size());
    const int obs_dim = env_->spec().obs_dim;
    const int act_dim = env_->spec().action_dim;
    Eigen::MatrixXd states(obs_dim, b);
    Eigen::MatrixXd actions(act_dim, b);
    for (int i = 0; i < b; ++i) {
        for (int r = 0; r < obs_dim; ++r) states(r, i) = batch[i]->state[r];
        for (int r = 0; r < act_dim; ++r) actions(r, i) = batch[i]->action[r];
    }
    const Eigen::MatrixXd out = state_.actor.forward_batch(states);
    const Eigen::VectorXd lp = head_.log_prob_batch(out, actions);
    const Eigen::VectorXd lp0 = prior_.log_density_batch(actions);
    double target = 0.0;
    for (int i = 0; i < b; ++i)
        target += batch[i]->reward - (lp(i) - lp0(i)) / config_.inv_temperature;
    return target / b;
}

double Trainer::theta_update(const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("theta_update: empty batch");
    const double target = theta_target_only(batch);
    if (!std::isfinite(target)) throw NumericError("theta_update: non-finite theta target");
    const double residual = state_.theta - target;
    last_theta_loss_ = residual * residual;
    double grad = 2.0 * residual;
    state_.opt_theta.step(std::span<double>(&state_.theta, 1), std::span<const double>(&grad, 1));
    return state_.theta;
}

double Trainer::update_reset_penalty(const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("update_reset_penalty: empty batch");
    double sum = 0.0;
    long n = 0;
    for (const Transition* t : batch) {
        if (config_.penalty_all_rewards || !t->terminated) {
            sum += t->reward;
            ++n;
        }
    }
    const double pbar = n > 0 ? config_.reset_scale * (sum / n) : 0.0;
    state_.reset_penalty = (1.0 - config_.polyak) * state_.reset_penalty + config_.polyak * pbar;
    return state_.reset_penalty;
}

void Trainer::polyak_targets() {
    polyak_update(state_.target1.params(), state_.critic1.params(), config_.polyak);
    polyak_update(state_.target2.params(), state_.critic2.params(), config_.polyak);
}

EvalResult Trainer::run_evaluation(std::uint64_t stream) const {
    std::unique_ptr<Env> eval_env = env_->clone();
    return evaluate(state_.actor, head_, *eval_env, config_.eval_episodes,
                    config_.eval_episode_len, derive_seed(config_.seed, kStreamEval + stream),
                    true);
}

std::vector<TrainLogRow> Trainer::train(std::ostream* csv) {
    const auto start = std::chrono::steady_clock::now();
    const int act_dim = env_->spec().action_dim;
    std::vector<TrainLogRow> rows;
    if (csv) *csv << kTrainCsvHeader << '\n';

    Eigen::VectorXd noise(act_dim);
    std::vector<double> action(static_cast<std::size_t>(act_dim));
    while (state_.env_steps < config_.total_steps) {
        // Act.
        if (state_.env_steps < config_.learning_starts) {
            for (int d = 0; d < act_dim; ++d) action[d] = rng_.uniform(-1.0, 1.0);
        } else {
            const Eigen::VectorXd out = state_.actor.forward(
                Eigen::Map<const Eigen::VectorXd>(obs_.data(), obs_.size()));
            for (int d = 0; d < act_dim; ++d) noise(d) = rng_.normal();
            const Eigen::VectorXd a = head_.sample(out, noise).action;
            for (int d = 0; d < act_dim; ++d) action[d] = a(d);
        }

        const StepResult sr = env_->step(action);
        Transition tr;
        tr.state = obs_;
        tr.action = action;
        tr.reward = sr.reward;
        tr.terminated = sr.terminated;
        if (sr.terminated) {
            // Continuing-task emulation: bootstrap from the reset state.
            tr.next_state =
                env_->reset(derive_seed(config_.seed, kStreamReset + static_cast<std::uint64_t>(
                                                                         state_.reset_count)));
            ++state_.reset_count;
        } else {
            tr.next_state = sr.obs;
        }
        obs_ = tr.next_state;
        state_.buffer.push(std::move(tr));
        ++state_.env_steps;

        // Learn.
        if (state_.env_steps > config_.learning_starts &&
            state_.env_steps % config_.train_freq == 0) {
            for (int g = 0; g < config_.gradient_steps; ++g) {
                const Batch batch = sample_batch();
                update_reset_penalty(batch);
                const std::vector<double> targets = critic_target(batch);
                critic_update(batch, targets);
                actor_update(batch);
                theta_update(batch);
                polyak_targets();
            }
        }

        // Log.
        if (state_.env_steps % config_.eval_interval == 0) {
            const EvalResult ev = run_evaluation(static_cast<std::uint64_t>(state_.env_steps));
            TrainLogRow row;
            row.step = state_.env_steps;
            row.theta = state_.theta;
            row.critic_loss = last_critic_loss_;
            row.actor_loss = last_actor_loss_;
            row.theta_loss = last_theta_loss_;
            row.reset_penalty = state_.reset_penalty;
            row.eval_return = ev.mean_return;
            row.eval_rate = ev.mean_rate;
            row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
            rows.push_back(row);
            if (csv) *csv << format_csv_row(row) << '\n';
        }
    }
    return rows;
}

} // namespace erar
