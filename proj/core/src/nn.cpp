#include "erar/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "erar/errors.hpp"

namespace erar {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178; // log(2*pi)/2
constexpr double kLog2 = 0.69314718055994530942;
constexpr double kAtanhClamp = 1.0 - 1e-12;

double atanh_clamped(double a) {
    const double c = a < -kAtanhClamp ? -kAtanhClamp : (a > kAtanhClamp ? kAtanhClamp : a);
    return 0.5 * (std::log1p(c) - std::log1p(-c));
}

// tanh via 1 - 2/(e^{2x}+1): identical math, but routed through Eigen's
// vectorized double exp (there is no packet tanh for doubles). Absolute error
// stays at ulp(1).
template <typename Derived>
auto vtanh(const Eigen::ArrayBase<Derived>& x) {
    return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

} // namespace

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (int n : sizes_)
        if (n < 1) throw std::invalid_argument("Mlp: layer sizes must be positive");
    std::size_t total = 0;
    offsets_.resize(sizes_.size() - 1);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_[l] = total;
        const std::size_t block = static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
        logical_count_ += block;
        total += (block + 7) / 8 * 8; // 64-byte boundary per layer block
    }
    params_.assign(total, 0.0);
}

Mlp Mlp::random_init(std::vector<int> layer_sizes, Rng& rng) {
    Mlp net(std::move(layer_sizes));
    for (int l = 0; l < net.num_layers(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
        const std::size_t count =
            static_cast<std::size_t>(net.sizes_[l + 1]) * net.sizes_[l] + net.sizes_[l + 1];
        double* p = net.params_.data() + net.offsets_[l];
        for (std::size_t i = 0; i < count; ++i) p[i] = rng.uniform(-bound, bound);
    }
    return net;
}

Mlp::WConstMap Mlp::weight(int layer) const {
    return WConstMap(params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]);
}

Mlp::BConstMap Mlp::bias(int layer) const {
    return BConstMap(params_.data() + offsets_[layer] +
                         static_cast<std::size_t>(sizes_[layer + 1]) * sizes_[layer],
                     sizes_[layer + 1]);
}

Mlp::WMap Mlp::weight(int layer) {
    return WMap(params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]);
}

Mlp::BMap Mlp::bias(int layer) {
    return BMap(params_.data() + offsets_[layer] +
                    static_cast<std::size_t>(sizes_[layer + 1]) * sizes_[layer],
                sizes_[layer + 1]);
}

Mlp::WMap Mlp::weight_in(std::span<double> flat, const std::vector<int>& sizes,
                         const std::vector<std::size_t>& offsets, int layer) {
    return WMap(flat.data() + offsets[layer], sizes[layer + 1], sizes[layer]);
}

Mlp::BMap Mlp::bias_in(std::span<double> flat, const std::vector<int>& sizes,
                       const std::vector<std::size_t>& offsets, int layer) {
    return BMap(flat.data() + offsets[layer] +
                    static_cast<std::size_t>(sizes[layer + 1]) * sizes[layer],
                sizes[layer + 1]);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
    return forward_batch(input);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& input) const {
    Cache scratch;
    return forward_batch(input, scratch);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& input, Cache& cache) const {
    if (input.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
    const int layers = num_layers();
    cache.act.resize(layers + 1);
    cache.act[0] = input;
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = (weight(l) * cache.act[l]).colwise() + bias(l);
        if (l + 1 < layers) z = vtanh(z.array());
        cache.act[l + 1] = std::move(z);
    }
    return cache.act[layers];
}

Eigen::MatrixXd Mlp::backward_batch(const Cache& cache, const Eigen::MatrixXd& out_grad,
                                    std::span<double> grad) const {
    const int layers = num_layers();
    if (grad.size() != params_.size()) throw std::invalid_argument("Mlp::backward: gradient buffer size mismatch");
    if (out_grad.rows() != output_dim() || out_grad.cols() != cache.act[0].cols())
        throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");

    Eigen::MatrixXd g = out_grad;
    for (int l = layers - 1; l >= 0; --l) {
        weight_in(grad, sizes_, offsets_, l).noalias() += g * cache.act[l].transpose();
        bias_in(grad, sizes_, offsets_, l).noalias() += g.rowwise().sum();
        g = (weight(l).transpose() * g).eval();
        if (l > 0) g.array() *= (1.0 - cache.act[l].array().square());
    }
    return g;
}

void AdamState::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw std::invalid_argument("AdamState::step: size mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw NumericError("AdamState::step: non-finite gradient");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
        params[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
}

void AdamState::restore(long step, std::vector<double> m, std::vector<double> v) {
    if (m.size() != m_.size() || v.size() != v_.size())
        throw std::invalid_argument("AdamState::restore: size mismatch");
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

void polyak_update(std::span<double> target, std::span<const double> online, double tau) {
    if (target.size() != online.size())
        throw std::invalid_argument("polyak_update: architecture mismatch");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau must be in [0, 1]");
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i] = tau * online[i] + (1.0 - tau) * target[i];
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grads) g *= scale;
    }
    return norm;
}

GaussianHead::Sample GaussianHead::sample(const Eigen::VectorXd& net_output,
                                          const Eigen::VectorXd& noise) const {
    if (net_output.size() != 2 * action_dim || noise.size() != action_dim)
        throw std::invalid_argument("GaussianHead::sample: dimension mismatch");
    Sample out;
    out.action.resize(action_dim);
    out.pre_squash.resize(action_dim);
    double logp = 0.0;
    for (int d = 0; d < action_dim; ++d) {
        const double mean = net_output(d);
        const double ls = clamp_log_std(net_output(action_dim + d));
        const double u = mean + std::exp(ls) * noise(d);
        // tanh rounds to exactly +/-1 past |u| ~ 19; keep actions strictly
        // inside the open interval so the atanh pullback stays finite.
        const double a = std::clamp(std::tanh(u), -kAtanhClamp, kAtanhClamp);
        out.pre_squash(d) = u;
        out.action(d) = a;
        logp += -kHalfLog2Pi - ls - 0.5 * noise(d) * noise(d);
        logp -= std::log(1.0 - a * a + squash_eps);
    }
    out.log_prob = logp;
    return out;
}

double GaussianHead::log_prob(const Eigen::VectorXd& net_output,
                              const Eigen::VectorXd& action) const {
    if (net_output.size() != 2 * action_dim || action.size() != action_dim)
        throw std::invalid_argument("GaussianHead::log_prob: dimension mismatch");
    double logp = 0.0;
    for (int d = 0; d < action_dim; ++d) {
        const double mean = net_output(d);
        const double ls = clamp_log_std(net_output(action_dim + d));
        const double u = atanh_clamped(action(d));
        const double z = (u - mean) / std::exp(ls);
        const double t = std::tanh(u);
        logp += -kHalfLog2Pi - ls - 0.5 * z * z;
        logp -= std::log(1.0 - t * t + squash_eps);
    }
    return logp;
}

GaussianHead::PathGrads GaussianHead::path_grads(const Eigen::VectorXd& net_output,
                                                 const Eigen::VectorXd& noise) const {
    PathGrads g;
    g.dlogp_dmean.resize(action_dim);
    g.dlogp_dlogstd.resize(action_dim);
    g.daction_dmean.resize(action_dim);
    g.daction_dlogstd.resize(action_dim);
    for (int d = 0; d < action_dim; ++d) {
        const double raw = net_output(action_dim + d);
        const double pass = (raw > log_std_min && raw < log_std_max) ? 1.0 : 0.0;
        const double ls = clamp_log_std(raw);
        const double std_ = std::exp(ls);
        const double u = net_output(d) + std_ * noise(d);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        // With the noise fixed, log pi = sum_d [-log(2pi)/2 - ls - noise^2/2]
        //                                - sum_d log(1 - tanh(u)^2 + eps);
        // only u depends on (mean, log_std).
        const double dcorr_du = 2.0 * t * sech2 / (sech2 + squash_eps);
        const double du_dls = std_ * noise(d);
        g.dlogp_dmean(d) = dcorr_du;
        g.dlogp_dlogstd(d) = pass * (-1.0 + dcorr_du * du_dls);
        g.daction_dmean(d) = sech2;
        g.daction_dlogstd(d) = pass * sech2 * du_dls;
    }
    return g;
}

GaussianHead::BatchSample GaussianHead::sample_batch(const Eigen::MatrixXd& net_output,
                                                     const Eigen::MatrixXd& noise) const {
    const int d = action_dim;
    if (net_output.rows() != 2 * d || noise.rows() != d || net_output.cols() != noise.cols())
        throw std::invalid_argument("GaussianHead::sample_batch: dimension mismatch");
    const auto mean = net_output.topRows(d).array();
    const Eigen::ArrayXXd ls =
        net_output.bottomRows(d).array().max(log_std_min).min(log_std_max);
    BatchSample out;
    out.pre_squash = (mean + ls.exp() * noise.array()).matrix();
    out.action = vtanh(out.pre_squash.array()).max(-kAtanhClamp).min(kAtanhClamp).matrix();
    const Eigen::ArrayXXd gaussian = -kHalfLog2Pi - ls - 0.5 * noise.array().square();
    const Eigen::ArrayXXd corr = (1.0 - out.action.array().square() + squash_eps).log();
    out.log_prob = (gaussian - corr).colwise().sum().transpose();
    return out;
}

Eigen::VectorXd GaussianHead::log_prob_batch(const Eigen::MatrixXd& net_output,
                                             const Eigen::MatrixXd& actions) const {
    const int d = action_dim;
    if (net_output.rows() != 2 * d || actions.rows() != d || net_output.cols() != actions.cols())
        throw std::invalid_argument("GaussianHead::log_prob_batch: dimension mismatch");
    const auto mean = net_output.topRows(d).array();
    const Eigen::ArrayXXd ls =
        net_output.bottomRows(d).array().max(log_std_min).min(log_std_max);
    const Eigen::ArrayXXd c = actions.array().max(-kAtanhClamp).min(kAtanhClamp);
    const Eigen::ArrayXXd u = 0.5 * ((1.0 + c).log() - (1.0 - c).log());
    const Eigen::ArrayXXd z = (u - mean) * (-ls).exp();
    const Eigen::ArrayXXd t = vtanh(u);
    const Eigen::ArrayXXd gaussian = -kHalfLog2Pi - ls - 0.5 * z.square();
    const Eigen::ArrayXXd corr = (1.0 - t.square() + squash_eps).log();
    return (gaussian - corr).colwise().sum().transpose();
}

GaussianHead::BatchPathGrads GaussianHead::path_grads_batch(const Eigen::MatrixXd& net_output,
                                                            const Eigen::MatrixXd& noise) const {
    const int d = action_dim;
    const auto raw = net_output.bottomRows(d).array();
    const Eigen::ArrayXXd pass =
        (raw > log_std_min && raw < log_std_max).cast<double>();
    const Eigen::ArrayXXd ls = raw.max(log_std_min).min(log_std_max);
    const Eigen::ArrayXXd std_ = ls.exp();
    const Eigen::ArrayXXd u = net_output.topRows(d).array() + std_ * noise.array();
    const Eigen::ArrayXXd t = vtanh(u);
    const Eigen::ArrayXXd sech2 = 1.0 - t.square();
    const Eigen::ArrayXXd dcorr_du = 2.0 * t * sech2 / (sech2 + squash_eps);
    const Eigen::ArrayXXd du_dls = std_ * noise.array();
    BatchPathGrads g;
    g.dlogp_dmean = dcorr_du.matrix();
    g.dlogp_dlogstd = (pass * (-1.0 + dcorr_du * du_dls)).matrix();
    g.daction_dmean = sech2.matrix();
    g.daction_dlogstd = (pass * sech2 * du_dls).matrix();
    return g;
}

double ActionPrior::log_density(const Eigen::VectorXd& action) const {
    if (action.size() != dim_) throw std::invalid_argument("ActionPrior: dimension mismatch");
    if (kind_ == Kind::Uniform) return -dim_ * kLog2;
    double logp = 0.0;
    for (int d = 0; d < dim_; ++d) {
        const double u = atanh_clamped(action(d));
        const double t = std::tanh(u);
        logp += -kHalfLog2Pi - 0.5 * u * u - std::log(1.0 - t * t + 1e-6);
    }
    return logp;
}

Eigen::VectorXd ActionPrior::dlogp_daction(const Eigen::VectorXd& action) const {
    if (action.size() != dim_) throw std::invalid_argument("ActionPrior: dimension mismatch");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
    if (kind_ == Kind::Uniform) return g;
    for (int d = 0; d < dim_; ++d) {
        const double u = atanh_clamped(action(d));
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        const double dlogp_du = -u + 2.0 * t * sech2 / (sech2 + 1e-6);
        g(d) = dlogp_du / std::max(sech2, 1e-300);
    }
    return g;
}

Eigen::VectorXd ActionPrior::log_density_batch(const Eigen::MatrixXd& actions) const {
    if (actions.rows() != dim_) throw std::invalid_argument("ActionPrior: dimension mismatch");
    if (kind_ == Kind::Uniform)
        return Eigen::VectorXd::Constant(actions.cols(), -dim_ * kLog2);
    const Eigen::ArrayXXd c = actions.array().max(-kAtanhClamp).min(kAtanhClamp);
    const Eigen::ArrayXXd u = 0.5 * ((1.0 + c).log() - (1.0 - c).log());
    const Eigen::ArrayXXd t = vtanh(u);
    const Eigen::ArrayXXd per_dim =
        -kHalfLog2Pi - 0.5 * u.square() - (1.0 - t.square() + 1e-6).log();
    return per_dim.colwise().sum().transpose();
}

Eigen::MatrixXd ActionPrior::dlogp_daction_batch(const Eigen::MatrixXd& actions) const {
    if (actions.rows() != dim_) throw std::invalid_argument("ActionPrior: dimension mismatch");
    if (kind_ == Kind::Uniform) return Eigen::MatrixXd::Zero(actions.rows(), actions.cols());
    const Eigen::ArrayXXd c = actions.array().max(-kAtanhClamp).min(kAtanhClamp);
    const Eigen::ArrayXXd u = 0.5 * ((1.0 + c).log() - (1.0 - c).log());
    const Eigen::ArrayXXd t = vtanh(u);
    const Eigen::ArrayXXd sech2 = 1.0 - t.square();
    const Eigen::ArrayXXd dlogp_du = -u + 2.0 * t * sech2 / (sech2 + 1e-6);
    return (dlogp_du / sech2.max(1e-300)).matrix();
}

} // namespace erar
