// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: window sampling, latent rollout, alternating generator
// and critic updates, the n_S curriculum, and checkpoint/resume.
#pragma once

#include "sak/corpus.hpp"
#include "sak/losses.hpp"
#include "sak/networks.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace sak {

struct TrainConfig {
    std::size_t iterations = 100000;
    double lr = 1e-5;
    std::size_t n_s_initial = 16;
    std::size_t n_s_max = 32;
    std::size_t curriculum_every = 20000;
    double curriculum_rate = 1.05;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0; ///< 0: final checkpoint only
    bool regenerate_koopman = true;   ///< false freezes K from the first rollout step
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossWeights weights;
    /// Spatial extent, channel count and conditioning are taken from the
    /// training corpora; the remaining fields come from the config.
    ArchConfig arch;

    void validate() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
/// Applies one "key=value" (or key, value) override.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
/// Flat key = value rendering; parse_train_config inverts it.
std::string format_train_config(const TrainConfig& cfg);

/// n_S after `iteration` completed steps: every curriculum_every iterations
/// n_S <- min(round(rate * n_S) + 1, n_S_max), round half away from zero.
std::size_t curriculum_update(std::size_t n_s, std::size_t iteration, const TrainConfig& cfg);

class Adam {
public:
    Adam() = default;
    Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps);
    void step(const std::vector<Tensor>& grads);
    std::size_t steps() const noexcept { return t_; }
    void export_state(const std::string& prefix, Checkpoint& ck) const;
    void import_state(const std::string& prefix, const Checkpoint& ck, std::size_t t);

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    std::size_t t_ = 0;
};

struct RunState {
    TrainConfig cfg;
    std::unique_ptr<SakModel> model;
    Adam gen_opt;
    Adam critic_opt;
    std::size_t n_s = 0;
    std::size_t iteration = 0; ///< completed steps
    std::mt19937_64 rng;
    std::vector<ChannelNormalization> normalization;
};

class Trainer {
public:
    /// Corpora are normalized jointly unless already normalized. More than
    /// one corpus requires every corpus to carry a conditioning value.
    Trainer(TrainConfig cfg, std::vector<SnapshotCorpus> corpora);
    /// Restores a checkpoint written by save().
    Trainer(const std::filesystem::path& checkpoint, std::vector<SnapshotCorpus> corpora);

    RunState& state() noexcept { return state_; }
    const RunState& state() const noexcept { return state_; }
    const std::vector<SnapshotCorpus>& corpora() const noexcept { return corpora_; }

    /// Draws a corpus (uniformly) and then batch_size windows of the current n_S.
    std::vector<SequenceWindow> sample_batch();
    /// One update of Encoder, Decoder and AUX.
    LossReport generator_step(const std::vector<SequenceWindow>& batch);
    /// One critic update; requires lambda_gan > 0.
    LossReport discriminator_step(const std::vector<SequenceWindow>& batch);
    /// Generator step, then (lambda_gan > 0) critic step on the same windows,
    /// then the curriculum update.
    LossReport step();

    void save(const std::filesystem::path& path) const;

private:
    void init_from_corpora();
    void check_corpora() const;

    struct Forward;
    Forward forward(const std::vector<SequenceWindow>& batch, const ForwardContext& ctx);
    /// Channel-stacked (X, X_next) critic input; `next` is [n_S*B, C, H, W].
    ad::Var critic_pair(const std::vector<SequenceWindow>& batch, const ad::Var& next) const;

    RunState state_;
    std::vector<SnapshotCorpus> corpora_;
};

struct TrainOptions {
    std::filesystem::path outdir;   ///< empty: no files written
    std::ostream* log = nullptr;    ///< loss lines also go here when set
    std::size_t until = 0;          ///< 0: cfg.iterations
};

/// Runs the loop from the trainer's current iteration; writes loss.log,
/// ckpt_<iter> every checkpoint_every steps and ckpt_final.
void run_training(Trainer& trainer, const TrainOptions& opts);

/// Model, normalization and config restored from a checkpoint.
struct LoadedRun {
    TrainConfig cfg;
    std::unique_ptr<SakModel> model;
    std::vector<ChannelNormalization> normalization;
    std::size_t iteration = 0;
};
LoadedRun load_run(const std::filesystem::path& checkpoint);

} // namespace sak
