// SPDX-License-Identifier: Apache-2.0
//
// Koopman algebra on Gaussian latent states.
//
// The latent state is a diagonal Gaussian (mu, log sigma). One step of the
// residual Koopman update is
//
//   mu'        = mu        + K_mu    * mu
//   log_sigma' = log_sigma + K_sigma * log_sigma
//
// so sigma = exp(log_sigma) stays positive whatever K_sigma is. log_sigma is
// clamped to [kLogSigmaMin, kLogSigmaMax] after every update.
#pragma once

#include "sak/autodiff.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace sak {

inline constexpr double kLogSigmaMin = -10.0;
inline constexpr double kLogSigmaMax = 10.0;

enum class KoopmanForm { dense, tridiagonal };

const char* to_string(KoopmanForm form);
KoopmanForm koopman_form_from_string(const std::string& s);

/// Free entries per Koopman matrix: M*M (dense) or 3M-2 (tridiagonal).
std::size_t koopman_param_count(KoopmanForm form, std::size_t m);

struct GaussianLatent {
    std::vector<double> mu;
    std::vector<double> log_sigma;

    std::size_t dim() const noexcept { return mu.size(); }
    bool finite() const noexcept;
};

/// One Koopman matrix in either storage form.
///
/// Dense parameters are row-major M x M. Tridiagonal parameters are laid out
/// as [lower (M-1) | main (M) | upper (M-1)], where lower[i] = K(i+1, i) and
/// upper[i] = K(i, i+1).
class KoopmanMatrix {
public:
    KoopmanMatrix() = default;
    KoopmanMatrix(KoopmanForm form, std::size_t m, std::vector<double> params);

    static KoopmanMatrix zeros(KoopmanForm form, std::size_t m);

    KoopmanForm form() const noexcept { return form_; }
    std::size_t dim() const noexcept { return m_; }
    std::span<const double> params() const noexcept { return params_; }

    std::vector<double> apply(std::span<const double> v) const;
    /// Row-major M x M embedding.
    std::vector<double> to_dense() const;

private:
    KoopmanForm form_ = KoopmanForm::dense;
    std::size_t m_ = 0;
    std::vector<double> params_;
};

struct KoopmanPair {
    KoopmanMatrix k_mu;
    KoopmanMatrix k_sigma;
};

struct Conditioning {
    std::optional<double> value;
};

/// Product of the tridiagonal matrix stored in `diags` with `v`.
std::vector<double> tridiag_apply(std::span<const double> diags, std::span<const double> v);

GaussianLatent koopman_step(const GaussianLatent& state, const KoopmanPair& pair);

/// z = mu + exp(log_sigma) * eps with eps ~ N(0, I).
std::vector<double> sample_latent(const GaussianLatent& state, std::mt19937_64& rng);

using OperatorFn = std::function<KoopmanPair(const GaussianLatent&)>;

/// States after 1..m Koopman steps. With `regenerate` the pair is rebuilt from
/// the current state before every step; otherwise the pair from state0 is
/// reused throughout. Throws NumericalError naming the step on non-finite
/// states.
std::vector<GaussianLatent> rollout(const GaussianLatent& state0, std::size_t m, const OperatorFn& operator_fn,
                                    bool regenerate = true);

// ---- differentiable, batched forms used during training -------------------

/// Rows are batch entries: mu and log_sigma have shape [B, M].
struct LatentBatch {
    ad::Var mu;
    ad::Var log_sigma;
};

/// K v per batch row; `params` is [B, n_dec] in the layout of KoopmanMatrix.
ad::Var koopman_apply(const ad::Var& params, const ad::Var& v, KoopmanForm form);

LatentBatch koopman_step(const LatentBatch& state, const ad::Var& k_mu, const ad::Var& k_sigma, KoopmanForm form);

/// Reparameterized sample; `eps` has the shape of state.mu.
ad::Var sample_latent(const LatentBatch& state, const Tensor& eps);

} // namespace sak
