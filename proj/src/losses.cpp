// SPDX-License-Identifier: Apache-2.0
#include "sak/losses.hpp"

#include "sak/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace sak {

using ad::Var;

const char* to_string(GanSign s) { return s == GanSign::standard ? "standard" : "paper"; }

GanSign gan_sign_from_string(const std::string& s) {
    if (s == "standard") return GanSign::standard;
    if (s == "paper") return GanSign::paper;
    throw ConfigError("gan sign must be 'standard' or 'paper', got '" + s + "'");
}

void LossWeights::validate() const {
    for (double v : {lambda_code, lambda_grad, lambda_reg, lambda_gan, lambda_1, lambda_2, lambda_4, gp_weight}) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
    }
    if (!std::isfinite(mmd_c)) throw ConfigError("mmd_c must be finite");
    for (int o : grad_orders) {
        if (o != 1 && o != 2 && o != 4) throw ConfigError("gradient loss orders must be among 1, 2, 4");
    }
}

double LossWeights::order_weight(int order) const {
    switch (order) {
    case 1: return lambda_1;
    case 2: return lambda_2;
    case 4: return lambda_4;
    default: throw ConfigError("unsupported gradient loss order " + std::to_string(order));
    }
}

Var recon_loss(const Var& x, const Var& x_hat) {
    if (x.shape() != x_hat.shape()) {
        throw std::invalid_argument("recon loss shape mismatch: " + shape_str(x.shape()) + " vs " +
                                    shape_str(x_hat.shape()));
    }
    return ad::mean(ad::square(ad::sub(x, x_hat)));
}

Var pred_loss(const std::vector<Var>& targets, const std::vector<Var>& preds) {
    if (targets.size() != preds.size() || targets.empty()) {
        throw std::invalid_argument("prediction loss needs equal, non-zero numbers of targets and predictions");
    }
    Var acc = recon_loss(targets[0], preds[0]);
    for (std::size_t i = 1; i < targets.size(); ++i) acc = ad::add(acc, recon_loss(targets[i], preds[i]));
    return ad::scale(acc, 1.0 / static_cast<double>(targets.size()));
}

double imq_kernel(std::span<const double> x, std::span<const double> y, double c) {
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
    return c / (c + d);
}

namespace {

// Sum over all (l, j) of C / (C + |a_l - b_j|^2) for [B, n, M] operands,
// returned per batch row as [B, 1, 1].
Var kernel_sum(const Var& a, const Var& b, double c) {
    const std::size_t bsz = a.dim(0), n = a.dim(1), m = a.dim(2);
    const Var diff = ad::sub(ad::reshape(a, Shape{bsz, n, 1, m}), ad::reshape(b, Shape{bsz, 1, n, m}));
    const Var d2 = ad::sum_to(ad::square(diff), Shape{bsz, n, n, 1});
    const Var f = ad::div(Var::constant(Tensor::scalar(c)), ad::add_scalar(d2, c));
    return ad::sum_to(f, Shape{bsz, 1, 1, 1});
}

} // namespace

Var mmd_code_loss(const Var& z_true, const Var& z_pred, double c) {
    if (z_true.shape() != z_pred.shape()) throw std::invalid_argument("MMD operands differ in shape");
    if (!(c > 0.0)) throw ConfigError("MMD kernel constant must be positive");
    Var a = z_true, b = z_pred;
    if (a.shape().size() == 2) {
        a = ad::reshape(a, Shape{1, a.dim(0), a.dim(1)});
        b = ad::reshape(b, Shape{1, b.dim(0), b.dim(1)});
    }
    if (a.shape().size() != 3) throw std::invalid_argument("MMD operands must be [n_S, M] or [B, n_S, M]");
    const std::size_t n = a.dim(1);
    if (n < 2) throw ConfigError("MMD code loss needs n_S >= 2");
    const double nn = static_cast<double>(n);
    // The l == j self-kernel terms are exactly 1 and are removed as a constant.
    const Var self_a = ad::add_scalar(kernel_sum(a, a, c), -nn);
    const Var self_b = ad::add_scalar(kernel_sum(b, b, c), -nn);
    const Var cross = kernel_sum(a, b, c);
    const Var per = ad::sub(ad::scale(ad::add(self_a, self_b), 1.0 / (nn * (nn - 1.0))),
                            ad::scale(cross, 2.0 / (nn * nn)));
    return ad::mean(per);
}

Tensor difference_matrix(int order, std::size_t n) {
    std::vector<double> stencil;
    std::size_t half = 0;
    switch (order) {
    case 1: stencil = {-0.5, 0.0, 0.5}; half = 1; break;
    case 2: stencil = {1.0, -2.0, 1.0}; half = 1; break;
    case 4: stencil = {1.0, -4.0, 6.0, -4.0, 1.0}; half = 2; break;
    default: throw ConfigError("unsupported gradient loss order " + std::to_string(order));
    }
    if (n < stencil.size()) {
        throw ConfigError("grid of " + std::to_string(n) + " points is too small for the order-" +
                          std::to_string(order) + " stencil");
    }
    Tensor d(Shape{n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= half && i + half < n) {
            for (std::size_t k = 0; k < stencil.size(); ++k) d[i * n + i - half + k] = stencil[k];
        } else if (order == 1) {
            // second-order one-sided first differences
            if (i == 0) {
                d[0] = -1.5, d[1] = 2.0, d[2] = -0.5;
            } else {
                d[i * n + i] = 1.5, d[i * n + i - 1] = -2.0, d[i * n + i - 2] = 0.5;
            }
        } else {
            // even orders reuse the nearest interior stencil
            const std::size_t centre = i < half ? half : n - 1 - half;
            for (std::size_t k = 0; k < stencil.size(); ++k) d[i * n + centre - half + k] = stencil[k];
        }
    }
    return d;
}

namespace {

// Applies D along the last axis of an NCHW field.
Var diff_last(const Var& e, const Tensor& d) {
    const Shape s = e.shape();
    const std::size_t w = s.back();
    const Var flat = ad::reshape(e, Shape{e.size() / w, w});
    return ad::reshape(ad::matmul(flat, Var::constant(d), false, true), s);
}

} // namespace

Var grad_loss(const std::vector<Var>& targets, const std::vector<Var>& preds, std::size_t spatial_rank,
              const LossWeights& w) {
    if (targets.size() != preds.size() || targets.empty()) {
        throw std::invalid_argument("gradient loss needs equal, non-zero numbers of targets and predictions");
    }
    if (w.grad_orders.empty()) throw ConfigError("gradient loss needs at least one order");
    const Shape s = targets[0].shape();
    if (s.size() != 4) throw std::invalid_argument("gradient loss expects NCHW fields");
    Var total = Var::constant(Tensor::scalar(0.0));
    for (int order : w.grad_orders) {
        const Tensor dw = difference_matrix(order, s[3]);
        const Tensor dh = spatial_rank == 2 ? difference_matrix(order, s[2]) : Tensor();
        std::vector<Var> dx;
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const Var e = ad::sub(targets[t], preds[t]);
            Var g = ad::mean(ad::square(diff_last(e, dw)));
            if (spatial_rank == 2) {
                const Var eh = ad::permute(e, {0, 1, 3, 2});
                g = ad::add(g, ad::mean(ad::square(diff_last(eh, dh))));
            }
            dx.push_back(g);
        }
        Var acc = dx[0];
        for (std::size_t t = 1; t < dx.size(); ++t) acc = ad::add(acc, dx[t]);
        total = ad::add(total, ad::scale(acc, w.order_weight(order) / static_cast<double>(dx.size())));
    }
    return total;
}

Var reg_loss(const std::vector<NamedParam>& params) {
    Var acc = Var::constant(Tensor::scalar(0.0));
    for (const auto& p : params) {
        if (p.regularized) acc = ad::add(acc, ad::sum(ad::square(p.var)));
    }
    return acc;
}

Var gan_generator_loss(const Var& fake_scores) { return ad::mean(fake_scores); }

Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> alpha(real.dim(0));
    for (auto& a : alpha) a = u(rng);
    return gradient_penalty(critic, real, fake, alpha);
}

Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake, std::span<const double> alpha) {
    if (real.shape() != fake.shape() || real.rank() < 2 || alpha.size() != real.dim(0)) {
        throw std::invalid_argument("gradient penalty needs matching real/fake batches and one weight per sample");
    }
    const std::size_t n = real.dim(0), per = real.size() / n;
    Tensor mix(real.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < per; ++k) {
            const std::size_t j = i * per + k;
            mix[j] = alpha[i] * real[j] + (1.0 - alpha[i]) * fake[j];
        }
    }
    const Var x = Var::parameter(std::move(mix));
    ad::GradModeGuard on(true);
    const Var score = ad::sum(critic(x));
    const std::vector<Var> wrt{x};
    const Var g = ad::reshape(ad::grad(score, wrt, /*create_graph=*/true)[0], Shape{n, per});
    const Var norm = ad::sqrt(ad::add_scalar(ad::sum_to(ad::square(g), Shape{n, 1}), 1e-12));
    return ad::mean(ad::square(ad::add_scalar(norm, -1.0)));
}

Var discriminator_loss(const Var& fake_scores, const Var& real_scores, const Var& gp, double gp_weight) {
    return ad::add(ad::sub(ad::mean(fake_scores), ad::mean(real_scores)), ad::scale(gp, gp_weight));
}

Var total_generator_loss(const LossParts& p, const LossWeights& w) {
    const std::pair<const char*, const Var*> named[] = {{"recon", &p.recon}, {"pred", &p.pred}, {"code", &p.code},
                                                        {"grad", &p.grad},   {"reg", &p.reg},   {"gan", &p.gan}};
    for (const auto& [name, v] : named) {
        if (v->defined() && !v->value().all_finite()) {
            throw NumericalError(std::string("non-finite ") + name + " loss");
        }
    }
    Var total = Var::constant(Tensor::scalar(0.0));
    const auto add = [&](const Var& v, double weight) {
        if (v.defined() && weight != 0.0) total = ad::add(total, weight == 1.0 ? v : ad::scale(v, weight));
    };
    add(p.recon, 1.0);
    add(p.pred, 1.0);
    add(p.code, w.lambda_code);
    add(p.grad, w.lambda_grad);
    add(p.reg, w.lambda_reg);
    add(p.gan, w.gan_sign == GanSign::standard ? -w.lambda_gan : w.lambda_gan);
    if (!total.value().all_finite()) throw NumericalError("non-finite total loss");
    return total;
}

double LossReport::get(const std::string& name) const {
    for (const auto& [n, v] : terms) {
        if (n == name) return v;
    }
    throw std::out_of_range("loss report has no term '" + name + "'");
}

void LossReport::set(const std::string& name, double v) {
    for (auto& [n, x] : terms) {
        if (n == name) {
            x = v;
            return;
        }
    }
    terms.emplace_back(name, v);
}

bool LossReport::finite() const {
    return std::all_of(terms.begin(), terms.end(), [](const auto& t) { return std::isfinite(t.second); });
}

std::string LossReport::line() const {
    std::string out = "step=" + std::to_string(step) + " n_s=" + std::to_string(n_s);
    char buf[64];
    for (const auto& [n, v] : terms) {
        std::snprintf(buf, sizeof buf, " %s=%.17g", n.c_str(), v);
        out += buf;
    }
    return out;
}

} // namespace sak
