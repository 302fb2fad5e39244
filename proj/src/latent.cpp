// SPDX-License-Identifier: Apache-2.0
#include "sak/latent.hpp"

#include "sak/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sak {

const char* to_string(KoopmanForm form) { return form == KoopmanForm::dense ? "dense" : "tridiagonal"; }

KoopmanForm koopman_form_from_string(const std::string& s) {
    if (s == "dense") return KoopmanForm::dense;
    if (s == "tridiagonal" || s == "tridiag") return KoopmanForm::tridiagonal;
    throw ConfigError("unknown Koopman form '" + s + "' (expected dense or tridiagonal)");
}

std::size_t koopman_param_count(KoopmanForm form, std::size_t m) {
    if (m == 0) return 0;
    return form == KoopmanForm::dense ? m * m : 3 * m - 2;
}

bool GaussianLatent::finite() const noexcept {
    const auto ok = [](double v) { return std::isfinite(v); };
    return std::all_of(mu.begin(), mu.end(), ok) && std::all_of(log_sigma.begin(), log_sigma.end(), ok);
}

KoopmanMatrix::KoopmanMatrix(KoopmanForm form, std::size_t m, std::vector<double> params)
    : form_(form), m_(m), params_(std::move(params)) {
    if (params_.size() != koopman_param_count(form, m)) {
        throw std::invalid_argument(std::string(to_string(form)) + " Koopman matrix of dimension " +
                                    std::to_string(m) + " needs " + std::to_string(koopman_param_count(form, m)) +
                                    " parameters, got " + std::to_string(params_.size()));
    }
}

KoopmanMatrix KoopmanMatrix::zeros(KoopmanForm form, std::size_t m) {
    return KoopmanMatrix(form, m, std::vector<double>(koopman_param_count(form, m), 0.0));
}

std::vector<double> KoopmanMatrix::apply(std::span<const double> v) const {
    if (v.size() != m_) {
        throw std::invalid_argument("Koopman matrix of dimension " + std::to_string(m_) +
                                    " applied to vector of length " + std::to_string(v.size()));
    }
    if (form_ == KoopmanForm::tridiagonal) return tridiag_apply(params_, v);
    std::vector<double> out(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m_; ++j) acc += params_[i * m_ + j] * v[j];
        out[i] = acc;
    }
    return out;
}

std::vector<double> KoopmanMatrix::to_dense() const {
    if (form_ == KoopmanForm::dense) return params_;
    std::vector<double> k(m_ * m_, 0.0);
    const double* lower = params_.data();
    const double* main = lower + (m_ - 1);
    const double* upper = main + m_;
    for (std::size_t i = 0; i < m_; ++i) {
        k[i * m_ + i] = main[i];
        if (i + 1 < m_) {
            k[(i + 1) * m_ + i] = lower[i];
            k[i * m_ + i + 1] = upper[i];
        }
    }
    return k;
}

std::vector<double> tridiag_apply(std::span<const double> diags, std::span<const double> v) {
    const std::size_t m = v.size();
    if (m == 0 || diags.size() != 3 * m - 2) {
        throw std::invalid_argument("tridiagonal parameters of length " + std::to_string(diags.size()) +
                                    " do not match vector length " + std::to_string(m));
    }
    const double* lower = diags.data();
    const double* main = lower + (m - 1);
    const double* upper = main + m;
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = main[i] * v[i];
        if (i > 0) acc += lower[i - 1] * v[i - 1];
        if (i + 1 < m) acc += upper[i] * v[i + 1];
        out[i] = acc;
    }
    return out;
}

GaussianLatent koopman_step(const GaussianLatent& state, const KoopmanPair& pair) {
    const std::size_t m = state.dim();
    if (state.log_sigma.size() != m || pair.k_mu.dim() != m || pair.k_sigma.dim() != m) {
        throw std::invalid_argument("Koopman pair dimension does not match latent dimension " + std::to_string(m));
    }
    GaussianLatent next;
    next.mu = pair.k_mu.apply(state.mu);
    next.log_sigma = pair.k_sigma.apply(state.log_sigma);
    for (std::size_t i = 0; i < m; ++i) {
        next.mu[i] += state.mu[i];
        next.log_sigma[i] = std::clamp(next.log_sigma[i] + state.log_sigma[i], kLogSigmaMin, kLogSigmaMax);
    }
    return next;
}

std::vector<double> sample_latent(const GaussianLatent& state, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(state.dim());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = state.mu[i] + std::exp(state.log_sigma[i]) * normal(rng);
    }
    return z;
}

std::vector<GaussianLatent> rollout(const GaussianLatent& state0, std::size_t m, const OperatorFn& operator_fn,
                                    bool regenerate) {
    if (m == 0) throw std::invalid_argument("rollout length must be at least 1");
    std::vector<GaussianLatent> states;
    states.reserve(m);
    GaussianLatent current = state0;
    KoopmanPair frozen;
    if (!regenerate) frozen = operator_fn(state0);
    for (std::size_t k = 0; k < m; ++k) {
        const KoopmanPair pair = regenerate ? operator_fn(current) : frozen;
        current = koopman_step(current, pair);
        if (!current.finite()) throw NumericalError("non-finite latent state at rollout step " + std::to_string(k + 1));
        states.push_back(current);
    }
    return states;
}

// ---- differentiable forms ---------------------------------------------------

ad::Var koopman_apply(const ad::Var& params, const ad::Var& v, KoopmanForm form) {
    const std::size_t batch = v.dim(0);
    const std::size_t m = v.dim(1);
    if (params.shape() != Shape{batch, koopman_param_count(form, m)}) {
        throw std::invalid_argument("Koopman parameters " + shape_str(params.shape()) + " do not match state " +
                                    shape_str(v.shape()));
    }
    if (form == KoopmanForm::dense) {
        ad::Var k = ad::reshape(params, {batch, m, m});
        ad::Var col = ad::reshape(v, {batch, m, 1});
        return ad::reshape(ad::bmm(k, col), {batch, m});
    }
    ad::Var main = ad::slice(params, 1, m - 1, 2 * m - 1);
    ad::Var out = ad::mul(main, v);
    if (m > 1) {
        ad::Var lower = ad::slice(params, 1, 0, m - 1);
        ad::Var upper = ad::slice(params, 1, 2 * m - 1, 3 * m - 2);
        // out[i] += lower[i-1] * v[i-1]  and  out[i] += upper[i] * v[i+1]
        ad::Var from_below = ad::pad_axis(ad::mul(lower, ad::slice(v, 1, 0, m - 1)), 1, 1, 0);
        ad::Var from_above = ad::pad_axis(ad::mul(upper, ad::slice(v, 1, 1, m)), 1, 0, 1);
        out = ad::add(ad::add(out, from_below), from_above);
    }
    return out;
}

LatentBatch koopman_step(const LatentBatch& state, const ad::Var& k_mu, const ad::Var& k_sigma, KoopmanForm form) {
    LatentBatch next;
    next.mu = ad::add(state.mu, koopman_apply(k_mu, state.mu, form));
    next.log_sigma = ad::clamp(ad::add(state.log_sigma, koopman_apply(k_sigma, state.log_sigma, form)),
                               kLogSigmaMin, kLogSigmaMax);
    return next;
}

ad::Var sample_latent(const LatentBatch& state, const Tensor& eps) {
    return ad::add(state.mu, ad::mul_const(ad::exp(state.log_sigma), eps));
}

} // namespace sak
