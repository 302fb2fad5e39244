// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "../support/gradcheck.hpp"
#include "sak/errors.hpp"
#include "sak/losses.hpp"

#include <cmath>
#include <random>

using namespace sak;
using ad::Var;

namespace {

Tensor rand_t(const Shape& s, std::mt19937_64& rng, double amp = 1.0) {
    Tensor t(s);
    for (auto& v : t.data()) v = std::uniform_real_distribution<double>(-amp, amp)(rng);
    return t;
}

double mmd_oracle(const Tensor& a, const Tensor& b, double c) {
    const std::size_t n = a.dim(0), m = a.dim(1);
    const auto f = [&](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
        double d = 0.0;
        for (std::size_t k = 0; k < m; ++k) d += (x[i * m + k] - y[j * m + k]) * (x[i * m + k] - y[j * m + k]);
        return c / (c + d);
    };
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        for (std::size_t j = 0; j < n; ++j) {
            if (l != j) {
                s1 += f(a, l, a, j);
                s2 += f(b, l, b, j);
            }
            s3 += f(a, l, b, j);
        }
    }
    const double nn = static_cast<double>(n);
    return s1 / (nn * (nn - 1)) + s2 / (nn * (nn - 1)) - 2.0 * s3 / (nn * nn);
}

} // namespace

TEST_CASE("reconstruction and prediction losses") {
    std::mt19937_64 rng(1);
    const Tensor x = rand_t({2, 1, 1, 8}, rng), y = rand_t({2, 1, 1, 8}, rng);
    CHECK(recon_loss(Var::constant(x), Var::constant(x)).value().item() == 0.0);
    CHECK(recon_loss(Var::constant(Tensor({3, 4}, 0.0)), Var::constant(Tensor({3, 4}, 1.0))).value().item() == 1.0);
    double ref = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) ref += (x[i] - y[i]) * (x[i] - y[i]);
    ref /= static_cast<double>(x.size());
    CHECK(std::abs(recon_loss(Var::constant(x), Var::constant(y)).value().item() - ref) < 1e-12);
    CHECK_THROWS(recon_loss(Var::constant(x), Var::constant(Tensor({2, 8}))));

    std::vector<Var> t, p;
    double mean = 0.0;
    for (int k = 0; k < 3; ++k) {
        const Tensor a = rand_t({1, 2, 1, 5}, rng), b = rand_t({1, 2, 1, 5}, rng);
        t.push_back(Var::constant(a));
        p.push_back(Var::constant(b));
        double e = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) e += (a[i] - b[i]) * (a[i] - b[i]);
        mean += e / 10.0 / 3.0;
    }
    CHECK(std::abs(pred_loss(t, p).value().item() - mean) < 1e-12);
    CHECK(pred_loss({t[0]}, {p[0]}).value().item() == recon_loss(t[0], p[0]).value().item());
    CHECK(pred_loss(t, t).value().item() == 0.0);
    CHECK_THROWS(pred_loss(t, {p[0]}));
}

TEST_CASE("MMD code loss matches the brute-force oracle") {
    const std::vector<double> x{0.3, -1.0}, y{0.3, 0.0};
    CHECK(imq_kernel(x, x, 3.0) == 1.0);
    CHECK(imq_kernel(x, y, 1.0) == 0.5);
    std::mt19937_64 rng(2);
    for (std::size_t n : {2u, 3u, 5u}) {
        for (std::size_t m = 1; m <= 8; ++m) {
            const Tensor a = rand_t({n, m}, rng), b = rand_t({n, m}, rng);
            const double c = 2.0 * static_cast<double>(m);
            const double got = mmd_code_loss(Var::constant(a), Var::constant(b), c).value().item();
            CHECK(std::abs(got - mmd_oracle(a, b, c)) < 1e-12);
            const double swapped = mmd_code_loss(Var::constant(b), Var::constant(a), c).value().item();
            CHECK(std::abs(got - swapped) < 1e-14);
        }
    }
    // batched form averages per-row values
    const Tensor a = rand_t({2, 3, 4}, rng), b = rand_t({2, 3, 4}, rng);
    const auto row = [](const Tensor& t, std::size_t r) {
        return Tensor({3, 4}, std::vector<double>(t.data().begin() + r * 12, t.data().begin() + (r + 1) * 12));
    };
    const double want = 0.5 * (mmd_oracle(row(a, 0), row(b, 0), 8.0) + mmd_oracle(row(a, 1), row(b, 1), 8.0));
    CHECK(std::abs(mmd_code_loss(Var::constant(a), Var::constant(b), 8.0).value().item() - want) < 1e-12);
    CHECK_THROWS_AS(mmd_code_loss(Var::constant(Tensor({1, 4})), Var::constant(Tensor({1, 4})), 8.0), ConfigError);
}

TEST_CASE("difference stencils") {
    const Tensor d1 = difference_matrix(1, 8), d2 = difference_matrix(2, 8), d4 = difference_matrix(4, 8);
    for (const Tensor* d : {&d1, &d2, &d4}) {
        for (std::size_t i = 0; i < 8; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 8; ++j) row += (*d)[i * 8 + j];
            CHECK(std::abs(row) < 1e-15);
        }
    }
    // order 1 is exact on a ramp everywhere, order 2 and 4 annihilate it
    for (std::size_t i = 0; i < 8; ++i) {
        double g1 = 0.0, g2 = 0.0, g4 = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            g1 += d1[i * 8 + j] * 0.7 * j;
            g2 += d2[i * 8 + j] * 0.7 * j;
            g4 += d4[i * 8 + j] * (0.7 * j + 0.1 * j * j);
        }
        CHECK(std::abs(g1 - 0.7) < 1e-12);
        CHECK(std::abs(g2) < 1e-12);
        CHECK(std::abs(g4) < 1e-12);
    }
    CHECK(d4[3 * 8 + 1] == 1.0);
    CHECK(d4[3 * 8 + 2] == -4.0);
    CHECK(d4[3 * 8 + 3] == 6.0);
    CHECK_THROWS_AS(difference_matrix(4, 4), ConfigError);
    CHECK_THROWS_AS(difference_matrix(3, 10), ConfigError);
}

TEST_CASE("gradient loss") {
    std::mt19937_64 rng(3);
    LossWeights w;
    w.grad_orders = {1, 2, 4};
    const Tensor t = rand_t({1, 1, 1, 16}, rng);
    CHECK(grad_loss({Var::constant(t)}, {Var::constant(t)}, 1, w).value().item() == 0.0);
    Tensor shifted = t;
    for (auto& v : shifted.data()) v += 0.37;
    CHECK(std::abs(grad_loss({Var::constant(t)}, {Var::constant(shifted)}, 1, w).value().item()) < 1e-20);

    LossWeights w1;
    Tensor ramp({1, 1, 1, 16});
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = 0.25 * i;
    const double g = grad_loss({Var::constant(ramp)}, {Var::constant(Tensor({1, 1, 1, 16}, 0.0))}, 1, w1).value().item();
    CHECK(std::abs(g - 0.0625) < 1e-10);

    // 2D: a ramp along H only
    Tensor ramp2({1, 1, 6, 5});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) ramp2[i * 5 + j] = 0.5 * i;
    const double g2 =
        grad_loss({Var::constant(ramp2)}, {Var::constant(Tensor({1, 1, 6, 5}, 0.0))}, 2, w1).value().item();
    CHECK(std::abs(g2 - 0.25) < 1e-10);

    for (int rep = 0; rep < 20; ++rep) {
        const Tensor a = rand_t({2, 2, 1, 12}, rng), b = rand_t({2, 2, 1, 12}, rng);
        CHECK(grad_loss({Var::constant(a)}, {Var::constant(b)}, 1, w).value().item() >= 0.0);
    }
}

TEST_CASE("regularization covers kernels only") {
    NamedParam k{"k", Var::parameter(Tensor({1}, 2.0)), true};
    NamedParam b{"b", Var::parameter(Tensor({3}, 5.0)), false};
    CHECK(reg_loss({k, b}).value().item() == 4.0);

    ArchConfig a;
    a.latent_dim = 4;
    a.input_shape = {32};
    a.encoder_filters = {4, 4, 4, 4, 4};
    a.aux_widths = {8};
    a.disc_filters = {4};
    const SakModel m(a, 3);
    double oracle = 0.0;
    for (const auto& p : m.generator_params()) {
        const bool kernel = p.name.size() > 7 && p.name.compare(p.name.size() - 7, 7, ".kernel") == 0;
        if (!kernel) continue;
        for (double v : p.var.value().data()) oracle += v * v;
    }
    const double got = reg_loss(m.generator_params()).value().item();
    CHECK(std::abs(got - oracle) <= 1e-8 * oracle);
    double aux_out = 0.0;
    for (const auto& p : m.generator_params()) {
        if (p.name == "aux.out.kernel") aux_out = reg_loss({p}).value().item();
    }
    CHECK(aux_out == 0.0);
}

TEST_CASE("adversarial losses") {
    CHECK(gan_generator_loss(Var::constant(Tensor({2, 1}, 0.0))).value().item() == 0.0);
    CHECK(gan_generator_loss(Var::constant(Tensor({2, 1}, std::vector<double>{1.0, 3.0}))).value().item() == 2.0);
    std::mt19937_64 rng(4);
    const Tensor s = rand_t({16, 1}, rng);
    double mean = 0.0;
    for (double v : s.data()) mean += v / 16.0;
    CHECK(std::abs(gan_generator_loss(Var::constant(s)).value().item() - mean) < 1e-15);

    const Var real = Var::constant(Tensor({2, 1}, 1.0)), fake = Var::constant(Tensor({2, 1}, 0.0));
    const Var zero = Var::constant(Tensor::scalar(0.0));
    CHECK(discriminator_loss(fake, real, zero, 10.0).value().item() == -1.0);
    CHECK(discriminator_loss(real, real, zero, 10.0).value().item() == 0.0);

    // Linear critic D(x) = sum(x): gradient norm sqrt(w) at every interpolate.
    for (std::size_t w : {1u, 4u, 9u, 30u}) {
        const Tensor r = rand_t({3, w}, rng), f = rand_t({3, w}, rng);
        const CriticFn sum_critic = [](const Var& x) { return ad::sum_to(x, Shape{x.dim(0), 1}); };
        const double gp = gradient_penalty(sum_critic, r, f, rng).value().item();
        const double want = (std::sqrt(static_cast<double>(w)) - 1.0) * (std::sqrt(static_cast<double>(w)) - 1.0);
        CHECK(std::abs(gp - want) < 1e-10);
        const CriticFn unit = [w](const Var& x) {
            return ad::scale(ad::sum_to(x, Shape{x.dim(0), 1}), 1.0 / std::sqrt(static_cast<double>(w)));
        };
        CHECK(gradient_penalty(unit, r, f, rng).value().item() < 1e-10);
    }
}

TEST_CASE("gradient penalty differentiates through the critic") {
    std::mt19937_64 rng(5);
    Var w1 = Var::parameter(rand_t({6, 4}, rng));
    Var w2 = Var::parameter(rand_t({4, 1}, rng));
    const Tensor r = rand_t({3, 6}, rng), f = rand_t({3, 6}, rng);
    const CriticFn critic = [&](const Var& x) { return ad::matmul(ad::leaky_relu(ad::matmul(x, w1), 0.2), w2); };
    const std::vector<double> alpha{0.2, 0.5, 0.9};
    const auto loss = [&] { return gradient_penalty(critic, r, f, alpha); };
    CHECK(testing::gradcheck(loss, {{"w1", w1}, {"w2", w2}}, 28, 1).max_rel_error < 1e-6);
}

TEST_CASE("weighted total loss") {
    const auto c = [](double v) { return Var::constant(Tensor::scalar(v)); };
    LossWeights w;
    w.lambda_gan = 0.1;
    w.gan_sign = GanSign::paper;
    CHECK(total_generator_loss({c(1), c(1), c(1), c(1), c(1), c(1)}, w).value().item() ==
          doctest::Approx(103.101).epsilon(1e-14));
    CHECK(total_generator_loss({c(0), c(0), c(0), c(0), c(0), c(0)}, w).value().item() == 0.0);
    w.gan_sign = GanSign::standard;
    CHECK(total_generator_loss({c(1), c(1), c(1), c(1), c(1), c(1)}, w).value().item() ==
          doctest::Approx(102.901).epsilon(1e-14));
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int i = 0; i < 10; ++i) {
        const double p[6] = {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
        const double want = p[0] + p[1] + 100.0 * p[2] + p[3] + 1e-3 * p[4] - 0.1 * p[5];
        CHECK(total_generator_loss({c(p[0]), c(p[1]), c(p[2]), c(p[3]), c(p[4]), c(p[5])}, w).value().item() ==
              doctest::Approx(want).epsilon(1e-13));
    }
    CHECK_THROWS_WITH_AS(total_generator_loss({c(1), c(NAN), c(1), c(1), c(1), c(1)}, w),
                         doctest::Contains("pred"), NumericalError);
    LossWeights bad;
    bad.lambda_code = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("loss report line") {
    LossReport r;
    r.step = 3;
    r.n_s = 8;
    r.set("recon", 0.5);
    r.set("total", 1.25);
    CHECK(r.line() == "step=3 n_s=8 recon=0.5 total=1.25");
    CHECK(r.get("total") == 1.25);
    CHECK(r.finite());
    r.set("recon", INFINITY);
    CHECK_FALSE(r.finite());
}
