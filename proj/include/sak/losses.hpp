// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Every loss takes and returns autodiff variables so the
// trainer can differentiate the weighted total in one pass.
#pragma once

#include "sak/autodiff.hpp"
#include "sak/networks.hpp"

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace sak {

/// Direction of the adversarial generator term.
/// standard: the generator minimizes -E[D(fake)]; paper: +E[D(fake)] as in
/// the literal total loss.
enum class GanSign { standard, paper };

const char* to_string(GanSign s);
GanSign gan_sign_from_string(const std::string& s);

struct LossWeights {
    double lambda_code = 100.0;
    double lambda_grad = 1.0;
    double lambda_reg = 1e-3;
    double lambda_gan = 0.0;
    double lambda_1 = 1.0;
    double lambda_2 = 1.0;
    double lambda_4 = 1.0;
    std::vector<int> grad_orders{1}; ///< subset of {1, 2, 4}
    double mmd_c = 0.0;             ///< <= 0 selects 2 * M
    double gp_weight = 10.0;
    GanSign gan_sign = GanSign::standard;

    void validate() const;
    double mmd_constant(std::size_t latent_dim) const {
        return mmd_c > 0.0 ? mmd_c : 2.0 * static_cast<double>(latent_dim);
    }
    double order_weight(int order) const;
};

/// Mean squared error over all elements.
ad::Var recon_loss(const ad::Var& x, const ad::Var& x_hat);
/// Mean of per-step MSEs.
ad::Var pred_loss(const std::vector<ad::Var>& targets, const std::vector<ad::Var>& preds);

/// Inverse multiquadrics kernel C / (C + |x - y|^2).
double imq_kernel(std::span<const double> x, std::span<const double> y, double c);

/// MMD between [n_S, M] (or batched [B, n_S, M], averaged over B) sample sets.
ad::Var mmd_code_loss(const ad::Var& z_true, const ad::Var& z_pred, double c);

/// Finite-difference operator of the given order (1, 2 or 4) as a dense
/// [n, n] matrix: central stencils in the interior, one-sided at the ends.
Tensor difference_matrix(int order, std::size_t n);

/// Gradient loss on NCHW fields (H = 1 for 1D). Differences are taken per
/// spatial axis and summed; each order j is weighted by lambda_j.
ad::Var grad_loss(const std::vector<ad::Var>& targets, const std::vector<ad::Var>& preds, std::size_t spatial_rank,
                  const LossWeights& w);

/// Sum of squares of the regularized (kernel) entries.
ad::Var reg_loss(const std::vector<NamedParam>& params);

/// Mean critic score on fake pairs.
ad::Var gan_generator_loss(const ad::Var& fake_scores);

using CriticFn = std::function<ad::Var(const ad::Var&)>;

/// E[(|grad_x D(x_hat)| - 1)^2] over per-sample interpolates
/// x_hat = a * real + (1 - a) * fake, a ~ U[0, 1).
ad::Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake, std::mt19937_64& rng);
/// Same with explicit interpolation weights (one per sample).
ad::Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake,
                         std::span<const double> alpha);

ad::Var discriminator_loss(const ad::Var& fake_scores, const ad::Var& real_scores, const ad::Var& gp,
                           double gp_weight);

struct LossParts {
    ad::Var recon, pred, code, grad, reg, gan;
};

/// Weighted generator objective; throws NumericalError naming any
/// non-finite term.
ad::Var total_generator_loss(const LossParts& parts, const LossWeights& w);

/// Named scalars for one training step, serialized as a single log line.
struct LossReport {
    std::size_t step = 0;
    std::size_t n_s = 0;
    std::vector<std::pair<std::string, double>> terms;

    double get(const std::string& name) const;
    void set(const std::string& name, double v);
    bool finite() const;
    std::string line() const;
};

} // namespace sak
