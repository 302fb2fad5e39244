// SPDX-License-Identifier: Apache-2.0
//
// Test-time rollouts in cycles, error curves and raster figures.
#pragma once

#include "sak/corpus.hpp"
#include "sak/networks.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sak {

struct RolloutOptions {
    std::size_t cycle_len = 64;
    std::size_t n_cycles = 1;
    std::size_t start = 0;              ///< corpus index of the seed snapshot
    std::optional<double> conditioning; ///< defaults to the corpus value
    bool regenerate_koopman = true;
    std::mt19937_64* rng = nullptr;     ///< set: z is sampled instead of z = mu
};

struct RolloutResult {
    SnapshotCorpus predictions;  ///< physical units, steps snapshots
    SnapshotCorpus ground_truth; ///< physical units, matching snapshots
    std::vector<double> mae_per_step;
    std::size_t cycle_len = 0;
    std::size_t n_cycles = 0;

    std::size_t steps() const { return mae_per_step.size(); }
};

/// Cycle hand-off conversions between physical units and model space,
/// channel-last snapshots.
Tensor to_model_units(std::span<const double> phys, const Shape& snapshot,
                      std::span<const ChannelNormalization> normalization);
std::vector<double> to_physical_units(const Tensor& t, std::span<const ChannelNormalization> normalization);

/// Recursive prediction from corpus snapshot `start`. Each cycle encodes the
/// current physical state, advances cycle_len latent steps and decodes them;
/// the last decoded snapshot seeds the next cycle. `normalization` maps the
/// model's [-1, 1] space to physical units.
RolloutResult rollout_cycles(const SakModel& model, std::span<const ChannelNormalization> normalization,
                             const SnapshotCorpus& corpus, const RolloutOptions& opts);

/// Every step of a cycle predicts decode(encode(seed).mu), with the same
/// cycle hand-off as rollout_cycles.
RolloutResult autoencode_hold_baseline(const SakModel& model, std::span<const ChannelNormalization> normalization,
                                       const SnapshotCorpus& corpus, const RolloutOptions& opts);

/// Every step predicts the seed snapshot itself.
RolloutResult hold_initial_baseline(const SnapshotCorpus& corpus, std::size_t steps, std::size_t start = 0);

/// Mean |a - b| per snapshot.
std::vector<double> mae_per_snapshot(const SnapshotCorpus& a, const SnapshotCorpus& b);

std::vector<double> mae_curve(const RolloutResult& result);
/// Two-column "step mae" table with a header line naming the units.
void write_mae_table(const RolloutResult& result, const std::filesystem::path& path);

struct StochasticMae {
    std::vector<double> mean, stddev;
};
/// k sampled rollouts; per-step mean and (population) standard deviation.
StochasticMae stochastic_mae(const SakModel& model, std::span<const ChannelNormalization> normalization,
                             const SnapshotCorpus& corpus, RolloutOptions opts, std::size_t k, std::uint64_t seed);

// ---- figures ---------------------------------------------------------------

/// 8-bit RGB raster, row-major.
struct Image {
    std::size_t width = 0, height = 0;
    std::vector<unsigned char> rgb;

    Image() = default;
    Image(std::size_t w, std::size_t h, unsigned char fill = 255) : width(w), height(h), rgb(w * h * 3, fill) {}
    void set(std::size_t x, std::size_t y, const std::array<unsigned char, 3>& c);
};

void write_png(const Image& img, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

/// Heatmap of a row-major [rows, cols] field; symmetric maps around zero
/// with a diverging palette, range [lo, hi] otherwise.
Image heatmap(std::span<const double> field, std::size_t rows, std::size_t cols, double lo, double hi,
              bool diverging);

struct Series {
    std::string label;
    std::vector<double> values;
};
/// Line plot of one or more curves over the step index.
Image line_plot(const std::vector<Series>& series, std::size_t width = 800, std::size_t height = 400);

/// Writes spacetime.png (1D) or step<k>_<channel>.png (2D) triplets of
/// pred / gt / gt - pred, plus mae.png. `steps` are 1-based step numbers.
std::vector<std::filesystem::path> emit_figures(const RolloutResult& result, const std::filesystem::path& outdir,
                                                const std::vector<std::size_t>& steps = {});

// ---- lambda_gan sweeps -----------------------------------------------------

/// Throws ConfigError for an empty list, duplicates or negative values.
void validate_sweep_values(const std::vector<double>& values);
/// Label used for a sweep column, e.g. "lambda_gan=0.01".
std::string sweep_label(double lambda_gan);
/// "step col1 col2 ..." table; columns may differ in length.
void write_sweep_table(const std::vector<Series>& columns, const std::filesystem::path& path);
/// Reads the two-column table written by write_mae_table.
std::vector<double> read_mae_table(const std::filesystem::path& path);

} // namespace sak
