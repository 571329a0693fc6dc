#include <doctest.h>

#include <cmath>

#include "erar/errors.hpp"
#include "erar/nn.hpp"
#include "test_support.hpp"

using namespace erar;
using erar::test::rel_err;

TEST_CASE("forward basics") {
    SUBCASE("zero-initialized net maps everything to zero") {
        Mlp net({3, 8, 2});
        Eigen::VectorXd x(3);
        x << 0.3, -1.2, 0.5;
        CHECK(net.forward(x).norm() == 0.0);
    }
    SUBCASE("identity-configured 1x1 net") {
        Mlp net({1, 1});
        net.params()[0] = 1.0; // weight
        net.params()[1] = 0.0; // bias
        Eigen::VectorXd x(1);
        x << 0.7;
        CHECK(net.forward(x)(0) == doctest::Approx(0.7).epsilon(1e-15));
    }
    SUBCASE("seeded nets are reproducible bitwise") {
        Rng r1(4), r2(4);
        Mlp a = Mlp::random_init({4, 16, 3}, r1);
        Mlp b = Mlp::random_init({4, 16, 3}, r2);
        Eigen::VectorXd x(4);
        x << 0.1, 0.2, -0.3, 0.9;
        const Eigen::VectorXd ya = a.forward(x), yb = b.forward(x);
        for (int i = 0; i < 3; ++i) CHECK(ya(i) == yb(i));
    }
    SUBCASE("dimension mismatch raises") {
        Mlp net({3, 4, 2});
        Eigen::VectorXd x(2);
        CHECK_THROWS_AS(net.forward(x), std::invalid_argument);
    }
    SUBCASE("parameter count is sum over layers of (n_in + 1) * n_out") {
        CHECK(Mlp({4, 8, 8, 2}).param_count() == (4 + 1) * 8 + (8 + 1) * 8 + (8 + 1) * 2);
        CHECK(Mlp({3, 64, 64, 1}).param_count() == 4 * 64 + 65 * 64 + 65 * 1);
    }
}

TEST_CASE("backward matches central finite differences on a 4-8-8-2 net") {
    Rng rng(11);
    Mlp net = Mlp::random_init({4, 8, 8, 2}, rng);
    Eigen::MatrixXd x(4, 5);
    for (int i = 0; i < x.size(); ++i) x(i % 4, i / 4) = rng.uniform(-1.0, 1.0);
    Eigen::MatrixXd og(2, 5);
    for (int i = 0; i < og.size(); ++i) og(i % 2, i / 2) = rng.uniform(-1.0, 1.0);

    Mlp::Cache cache;
    net.forward_batch(x, cache);
    Mlp::AlignedVector grad(net.params().size(), 0.0);
    const Eigen::MatrixXd input_grad = net.backward_batch(cache, og, grad);

    const double h = 1e-5;
    auto objective = [&] { return (net.forward_batch(x).array() * og.array()).sum(); };
    for (int probe = 0; probe < 50; ++probe) {
        const std::size_t i = static_cast<std::size_t>(rng.uniform() * net.params().size());
        const double keep = net.params()[i];
        net.params()[i] = keep + h;
        const double up = objective();
        net.params()[i] = keep - h;
        const double dn = objective();
        net.params()[i] = keep;
        CHECK(rel_err(grad[i], (up - dn) / (2.0 * h)) < 1e-4);
    }
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 5; ++c) {
            const double keep = x(r, c);
            x(r, c) = keep + h;
            const double up = objective();
            x(r, c) = keep - h;
            const double dn = objective();
            x(r, c) = keep;
            CHECK(rel_err(input_grad(r, c), (up - dn) / (2.0 * h)) < 1e-4);
        }
    }
}

TEST_CASE("backward linearity") {
    Rng rng(13);
    Mlp net = Mlp::random_init({3, 6, 2}, rng);
    Eigen::MatrixXd x(3, 4);
    for (int i = 0; i < x.size(); ++i) x(i % 3, i / 3) = rng.uniform(-1.0, 1.0);
    Mlp::Cache cache;
    net.forward_batch(x, cache);

    SUBCASE("zero output gradient gives zero parameter gradient") {
        Mlp::AlignedVector grad(net.params().size(), 0.0);
        net.backward_batch(cache, Eigen::MatrixXd::Zero(2, 4), grad);
        for (double g : grad) CHECK(g == 0.0);
    }
    SUBCASE("doubling the output gradient doubles every entry") {
        Eigen::MatrixXd og(2, 4);
        for (int i = 0; i < og.size(); ++i) og(i % 2, i / 2) = rng.uniform(-1.0, 1.0);
        Mlp::AlignedVector g1(net.params().size(), 0.0), g2(net.params().size(), 0.0);
        net.backward_batch(cache, og, g1);
        net.backward_batch(cache, 2.0 * og, g2);
        for (std::size_t i = 0; i < g1.size(); ++i)
            CHECK(std::abs(g2[i] - 2.0 * g1[i]) < 1e-12 * std::max(1.0, std::abs(g2[i])));
    }
}

TEST_CASE("batched head math agrees with the scalar path") {
    GaussianHead head;
    head.action_dim = 3;
    Rng rng(17);
    Eigen::MatrixXd out(6, 8), noise(3, 8), actions(3, 8);
    for (int i = 0; i < out.size(); ++i) out(i % 6, i / 6) = rng.uniform(-2.0, 2.0);
    for (int i = 0; i < noise.size(); ++i) noise(i % 3, i / 3) = rng.normal();
    const GaussianHead::BatchSample bs = head.sample_batch(out, noise);
    for (int c = 0; c < 8; ++c) {
        const GaussianHead::Sample s = head.sample(out.col(c), noise.col(c));
        CHECK(std::abs(s.log_prob - bs.log_prob(c)) < 1e-12);
        for (int d = 0; d < 3; ++d) CHECK(std::abs(s.action(d) - bs.action(d, c)) < 1e-12);
        actions.col(c) = s.action;
    }
    const Eigen::VectorXd lp = head.log_prob_batch(out, actions);
    for (int c = 0; c < 8; ++c) {
        CHECK(std::abs(head.log_prob(out.col(c), actions.col(c)) - lp(c)) < 1e-12);
        // Pulling the sampled action back recovers the sampling density.
        CHECK(std::abs(lp(c) - bs.log_prob(c)) < 1e-9);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradients leave parameters unchanged") {
        AdamState opt(3, {.lr = 0.1});
        std::vector<double> p{1.0, -2.0, 0.5};
        const std::vector<double> g(3, 0.0);
        const std::vector<double> before = p;
        opt.step(p, g);
        for (int i = 0; i < 3; ++i) CHECK(p[i] == before[i]);
        CHECK(opt.step_count() == 1);
    }
    SUBCASE("first step moves by about lr in the gradient direction") {
        AdamState opt(1, {.lr = 0.1});
        std::vector<double> p{0.0};
        const std::vector<double> g{1.0};
        opt.step(p, g);
        // m-hat = 1, v-hat = 1 -> step = -lr / (1 + eps)
        CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
    }
    SUBCASE("step counter advances per call") {
        AdamState opt(1, {.lr = 0.01});
        std::vector<double> p{0.0};
        const std::vector<double> g{0.5};
        opt.step(p, g);
        opt.step(p, g);
        CHECK(opt.step_count() == 2);
    }
    SUBCASE("non-finite gradients abort") {
        AdamState opt(1, {.lr = 0.01});
        std::vector<double> p{0.0};
        const std::vector<double> g{std::numeric_limits<double>::quiet_NaN()};
        CHECK_THROWS_AS(opt.step(p, g), NumericError);
    }
}

TEST_CASE("polyak_update") {
    std::vector<double> target{0.0, 10.0}, online{1.0, -10.0};
    SUBCASE("tau = 1 copies online") {
        polyak_update(target, online, 1.0);
        CHECK(target[0] == 1.0);
        CHECK(target[1] == -10.0);
    }
    SUBCASE("tau = 0 is a no-op") {
        polyak_update(target, online, 0.0);
        CHECK(target[0] == 0.0);
        CHECK(target[1] == 10.0);
    }
    SUBCASE("small tau arithmetic") {
        std::vector<double> t{0.0}, o{1.0};
        polyak_update(t, o, 0.005);
        CHECK(t[0] == doctest::Approx(0.005).epsilon(1e-15));
    }
    SUBCASE("contraction toward online parameters") {
        Rng rng(3);
        std::vector<double> t(64), o(64);
        for (int i = 0; i < 64; ++i) {
            t[i] = rng.uniform(-1, 1);
            o[i] = rng.uniform(-1, 1);
        }
        double before = 0.0;
        for (int i = 0; i < 64; ++i) before += (t[i] - o[i]) * (t[i] - o[i]);
        const double tau = 0.005;
        polyak_update(t, o, tau);
        double after = 0.0;
        for (int i = 0; i < 64; ++i) after += (t[i] - o[i]) * (t[i] - o[i]);
        CHECK(std::sqrt(after) ==
              doctest::Approx((1.0 - tau) * std::sqrt(before)).epsilon(1e-12));
    }
    SUBCASE("architecture mismatch raises") {
        std::vector<double> t(3), o(4);
        CHECK_THROWS_AS(polyak_update(t, o, 0.5), std::invalid_argument);
    }
}

TEST_CASE("clip_grad_norm") {
    SUBCASE("under the threshold: unchanged") {
        std::vector<double> g{3.0, 4.0}; // norm 5
        CHECK(clip_grad_norm(g, 10.0) == doctest::Approx(5.0));
        CHECK(g[0] == 3.0);
        CHECK(g[1] == 4.0);
    }
    SUBCASE("above the threshold: rescaled to max_norm") {
        std::vector<double> g{30.0, 40.0}; // norm 50
        CHECK(clip_grad_norm(g, 10.0) == doctest::Approx(50.0));
        CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-12));
        CHECK(g[1] == doctest::Approx(8.0).epsilon(1e-12));
    }
    SUBCASE("zero gradients: unchanged") {
        std::vector<double> g{0.0, 0.0};
        clip_grad_norm(g, 1.0);
        CHECK(g[0] == 0.0);
    }
    SUBCASE("output norm never exceeds the bound") {
        Rng rng(8);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> g(17);
            for (double& x : g) x = rng.uniform(-100.0, 100.0);
            clip_grad_norm(g, 2.5);
            double sq = 0.0;
            for (double x : g) sq += x * x;
            CHECK(std::sqrt(sq) <= 2.5 + 1e-9);
        }
    }
}

TEST_CASE("sample_squashed at the origin") {
    GaussianHead head;
    head.action_dim = 2;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(4); // mean 0, log-std 0
    Eigen::VectorXd noise = Eigen::VectorXd::Zero(2);
    const GaussianHead::Sample s = head.sample(out, noise);
    CHECK(s.action.norm() == 0.0);
    const double want = 2.0 * std::log(1.0 / std::sqrt(2.0 * 3.14159265358979323846)) -
                        2.0 * std::log(1.0 + 1e-6);
    CHECK(s.log_prob == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("squashed actions stay strictly inside (-1,1) and log-probs stay finite") {
    GaussianHead head;
    head.action_dim = 1;
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        Eigen::VectorXd out(2);
        out << rng.uniform(-30.0, 30.0), rng.uniform(-25.0, 5.0);
        Eigen::VectorXd noise(1);
        noise << rng.normal();
        const GaussianHead::Sample s = head.sample(out, noise);
        CHECK(s.action(0) > -1.0);
        CHECK(s.action(0) < 1.0);
        CHECK(std::isfinite(s.log_prob));
        CHECK(std::isfinite(head.log_prob(out, s.action)));
    }
    // |u| = 20 explicitly: the squash guard keeps the density finite.
    Eigen::VectorXd out(2);
    out << 20.0, 0.0;
    Eigen::VectorXd noise = Eigen::VectorXd::Zero(1);
    CHECK(std::isfinite(head.sample(out, noise).log_prob));
}

TEST_CASE("head path gradients match finite differences") {
    GaussianHead head;
    head.action_dim = 2;
    Rng rng(21);
    const double h = 1e-5;
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::VectorXd out(4);
        out << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-3.0, 1.0),
            rng.uniform(-3.0, 1.0);
        Eigen::VectorXd noise(2);
        noise << rng.normal(), rng.normal();
        const GaussianHead::PathGrads pg = head.path_grads(out, noise);
        for (int i = 0; i < 4; ++i) {
            Eigen::VectorXd probe = out;
            probe(i) += h;
            const GaussianHead::Sample up = head.sample(probe, noise);
            probe(i) -= 2.0 * h;
            const GaussianHead::Sample dn = head.sample(probe, noise);
            const double fd_logp = (up.log_prob - dn.log_prob) / (2.0 * h);
            const int d = i % 2;
            const double an_logp = i < 2 ? pg.dlogp_dmean(d) : pg.dlogp_dlogstd(d);
            CHECK(rel_err(an_logp, fd_logp) < 1e-4);
            const double fd_a = (up.action(d) - dn.action(d)) / (2.0 * h);
            const double an_a = i < 2 ? pg.daction_dmean(d) : pg.daction_dlogstd(d);
            CHECK(rel_err(an_a, fd_a) < 1e-4);
        }
    }
}

TEST_CASE("log-std clamp zeroes the saturated gradient") {
    GaussianHead head;
    head.action_dim = 1;
    Eigen::VectorXd out(2);
    out << 0.0, -25.0; // below log_std_min
    Eigen::VectorXd noise(1);
    noise << 0.7;
    const GaussianHead::PathGrads pg = head.path_grads(out, noise);
    CHECK(pg.dlogp_dlogstd(0) == 0.0);
    CHECK(pg.daction_dlogstd(0) == 0.0);
}

TEST_CASE("action priors") {
    SUBCASE("uniform density on (-1,1)^d") {
        ActionPrior prior(ActionPrior::Kind::Uniform, 3);
        Eigen::VectorXd a(3);
        a << 0.2, -0.9, 0.0;
        CHECK(prior.log_density(a) == doctest::Approx(-3.0 * std::log(2.0)).epsilon(1e-14));
        CHECK(prior.dlogp_daction(a).norm() == 0.0);
    }
    SUBCASE("squashed-gaussian prior gradient matches finite differences") {
        ActionPrior prior(ActionPrior::Kind::SquashedGaussian, 2);
        Rng rng(31);
        const double h = 1e-6;
        for (int rep = 0; rep < 20; ++rep) {
            Eigen::VectorXd a(2);
            a << rng.uniform(-0.95, 0.95), rng.uniform(-0.95, 0.95);
            const Eigen::VectorXd g = prior.dlogp_daction(a);
            for (int d = 0; d < 2; ++d) {
                Eigen::VectorXd p = a;
                p(d) += h;
                const double up = prior.log_density(p);
                p(d) -= 2.0 * h;
                const double dn = prior.log_density(p);
                CHECK(rel_err(g(d), (up - dn) / (2.0 * h)) < 1e-4);
            }
        }
    }
    SUBCASE("batch variants agree with scalar calls") {
        for (auto kind : {ActionPrior::Kind::Uniform, ActionPrior::Kind::SquashedGaussian}) {
            ActionPrior prior(kind, 2);
            Rng rng(33);
            Eigen::MatrixXd a(2, 6);
            for (int i = 0; i < a.size(); ++i) a(i % 2, i / 2) = rng.uniform(-0.99, 0.99);
            const Eigen::VectorXd lp = prior.log_density_batch(a);
            const Eigen::MatrixXd g = prior.dlogp_daction_batch(a);
            for (int c = 0; c < 6; ++c) {
                CHECK(std::abs(lp(c) - prior.log_density(a.col(c))) < 1e-12);
                CHECK((g.col(c) - prior.dlogp_daction(a.col(c))).norm() < 1e-12);
            }
        }
    }
}
