// SPDX-License-Identifier: Apache-2.0
//
// Encoder, Decoder, auxiliary Koopman network (AUX) and critic (DISC).
//
// All convolutional code runs on NCHW tensors; 1D problems use H = 1 with
// 1 x k kernels. Inputs whose spatial extent is not a multiple of 2^stages
// are zero padded at the end of each axis before encoding and cropped after
// decoding.
#pragma once

#include "sak/autodiff.hpp"
#include "sak/latent.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sak {
/// Bias of the log-sigma head at initialization (its kernel starts at zero).
inline constexpr double kInitialLogSigma = -4.0;


struct ArchConfig {
    std::size_t latent_dim = 64;
    std::size_t spatial_rank = 1;
    std::size_t channels = 1;
    Shape input_shape{1024}; ///< spatial dims only
    KoopmanForm koopman_form = KoopmanForm::dense;
    bool conditioned = false;
    double dropout_keep = 0.8;
    double leaky_slope = 0.2;
    double bn_momentum = 0.99;
    double bn_eps = 1e-3;
    std::vector<std::size_t> encoder_filters{64, 128, 256, 512, 512};
    std::vector<std::size_t> aux_widths{128, 256, 512};
    std::vector<std::size_t> disc_filters{64, 128, 256, 512};
    /// Sequence length the critic input is sized for (the largest n_S);
    /// shorter pairs are zero padded along the channel axis.
    std::size_t disc_sequence = 1;

    void validate() const;

    std::size_t stride_factor() const { return std::size_t{1} << encoder_filters.size(); }
    Shape padded_shape() const;
    /// Spatial dims after all encoder stages.
    Shape bottleneck_shape() const;
    std::size_t flatten_width() const;
    std::size_t n_dec() const { return koopman_param_count(koopman_form, latent_dim); }
    std::size_t aux_input_width() const { return 2 * latent_dim + (conditioned ? 1 : 0); }
    std::size_t aux_output_width() const { return 2 * n_dec(); }
    std::size_t disc_channels() const { return 2 * disc_sequence * channels; }
    /// Filters of each decoder stage: reversed encoder widths, ending in channels.
    std::vector<std::size_t> decoder_filters() const;
};

nlohmann::json to_json(const ArchConfig& a);
ArchConfig arch_from_json(const nlohmann::json& j);

struct ForwardContext {
    bool training = false;
    /// BatchNorm running statistics are updated on training passes only when set.
    bool update_stats = false;
    std::mt19937_64* rng = nullptr; ///< dropout masks; required when training
};

struct NamedParam {
    std::string name;
    ad::Var var;
    bool regularized = false; ///< conv/dense kernels; excludes biases and BN
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw,
           std::mt19937_64& init);
    ad::Var forward(const ad::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    ad::Var weight; ///< [out, in*kh*kw]
    ad::Var bias;   ///< [out]

private:
    std::size_t in_ = 0, out_ = 0, kh_ = 1, kw_ = 1, sh_ = 1, sw_ = 1;
};

/// Transposed convolution: the adjoint of a "same" convolution from the
/// upsampled extent (in * stride) down to the input extent.
class Deconv2d {
public:
    Deconv2d() = default;
    Deconv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw,
             std::mt19937_64& init);
    ad::Var forward(const ad::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    ad::Var weight; ///< [out*kh*kw, in]
    ad::Var bias;   ///< [out]

private:
    std::size_t in_ = 0, out_ = 0, kh_ = 1, kw_ = 1, sh_ = 1, sw_ = 1;
};

class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(std::size_t channels, double momentum, double eps);
    /// NCHW input; batch statistics when training, running statistics otherwise.
    ad::Var forward(const ad::Var& x, const ForwardContext& ctx) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<NamedParam>& out) const;

    ad::Var gamma, beta;
    ad::Var running_mean, running_var; ///< constant leaves, updated in place

private:
    std::size_t channels_ = 0;
    double momentum_ = 0.99, eps_ = 1e-3;
};

class Dense {
public:
    Dense() = default;
    Dense(std::size_t in, std::size_t out, std::mt19937_64& init, bool zero_init = false);
    ad::Var forward(const ad::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

    ad::Var weight; ///< [in, out]
    ad::Var bias;   ///< [out]
};

/// Output of AUX: Koopman parameters per batch row, [B, n_dec] each.
struct KoopmanBatch {
    ad::Var k_mu;
    ad::Var k_sigma;
};

class SakModel {
public:
    SakModel(ArchConfig arch, std::uint64_t seed);

    const ArchConfig& arch() const noexcept { return arch_; }

    /// [N, C, Hp, Wp] -> (mu, log_sigma) of shape [N, M].
    LatentBatch encode(const ad::Var& x, const ForwardContext& ctx) const;
    /// [N, M] -> [N, C, Hp, Wp].
    ad::Var decode(const ad::Var& z, const ForwardContext& ctx) const;
    /// `cond` is [B, 1] and must be given iff the model is conditioned.
    KoopmanBatch aux(const LatentBatch& state, const ad::Var* cond, const ForwardContext& ctx) const;
    /// [N, disc_channels, Hp, Wp] -> [N, 1] unbounded scores.
    ad::Var discriminate(const ad::Var& pair, const ForwardContext& ctx) const;

    // Single-sample evaluation-mode conveniences on physical layouts.
    GaussianLatent encode(const Tensor& snapshot) const;
    Tensor decode(std::span<const double> z) const;
    KoopmanPair aux_forward(const GaussianLatent& state, const Conditioning& cond) const;
    /// `pair` is [disc_channels, spatial...] in channel-first layout.
    double discriminate(const Tensor& pair) const;

    std::vector<NamedParam> generator_params() const;
    std::vector<NamedParam> critic_params() const;
    std::vector<NamedParam> buffers() const;

    Conv2d& critic_head_conv() { return disc_in_; }
    Dense& critic_head() { return disc_out_; }
    Dense& aux_head() { return aux_out_; }

private:
    struct EncoderStage {
        Conv2d down;
        BatchNorm bn1, bn2, bn3;
        Conv2d c1, c2, c3;
    };
    struct DecoderStage {
        BatchNorm bn1, bn2, bn3;
        Deconv2d d1, d2, d3;
        Deconv2d up;
    };
    struct CriticStage {
        Conv2d conv;
        BatchNorm bn;
    };

    ArchConfig arch_;
    std::vector<EncoderStage> enc_;
    Dense enc_mu_, enc_log_sigma_;
    Dense dec_in_;
    std::vector<DecoderStage> dec_;
    std::vector<Dense> aux_hidden_;
    Dense aux_out_;
    Conv2d disc_in_;
    std::vector<CriticStage> disc_;
    Dense disc_out_;
};

/// Stacks [spatial..., C] snapshots into a zero-padded [N, C, Hp, Wp] batch.
Tensor to_model_layout(std::span<const Tensor> snapshots, const ArchConfig& arch);
/// Crops the padding: [N, C, Hp, Wp] -> [N, C, H, W].
ad::Var crop_to_input(const ad::Var& x, const ArchConfig& arch);
/// Zero pads [N, C, H, W] to the model extent.
ad::Var pad_to_model(const ad::Var& x, const ArchConfig& arch);
/// Row n of a cropped [N, C, H, W] batch back to [spatial..., C].
Tensor from_model_layout(const Tensor& batch, std::size_t n, const ArchConfig& arch);

/// Independent closed-form parameter count (generator, critic).
std::pair<std::size_t, std::size_t> parameter_counts(const ArchConfig& arch);

/// Named tensors plus a JSON header in one versioned binary file.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters and BatchNorm statistics of the model, by name.
void export_model(const SakModel& model, Checkpoint& ckpt);
void import_model(SakModel& model, const Checkpoint& ckpt);

/// Order-sensitive FNV-1a digest of parameter bytes (isolation checks).
std::uint64_t param_checksum(std::span<const NamedParam> params);

} // namespace sak
