// SPDX-License-Identifier: Apache-2.0
//
// Snapshot corpora: the time-ordered training data for every problem.
//
// On disk a corpus is one file: a 4096-byte ASCII header of "key: value"
// lines (space padded, starting with the magic line "SAKCORPUS 1") followed
// by the payload as little-endian float32 in row-major [T, spatial..., C]
// order.
#pragma once

#include "sak/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sak {

inline constexpr std::size_t kCorpusHeaderBytes = 4096;

/// physical = normalized * scale + shift
struct ChannelNormalization {
    double shift = 0.0;
    double scale = 1.0;
    bool constant = false; ///< channel had max == min when fitted
};

struct SnapshotCorpus {
    Shape shape; ///< [T, spatial..., C]
    std::vector<float> data;
    double dt = 1.0;
    std::size_t spatial_rank = 1;
    std::vector<std::string> channel_names;
    std::optional<double> conditioning;
    /// Empty for raw corpora; one entry per channel once normalized.
    std::vector<ChannelNormalization> normalization;

    std::size_t steps() const { return shape.at(0); }
    std::size_t channels() const { return shape.back(); }
    /// Spatial dims followed by channels.
    Shape snapshot_shape() const { return Shape(shape.begin() + 1, shape.end()); }
    std::size_t snapshot_size() const { return shape_size(snapshot_shape()); }
    std::size_t spatial_points() const { return snapshot_size() / channels(); }
    bool normalized() const noexcept { return !normalization.empty(); }

    std::span<const float> snapshot(std::size_t t) const;
    /// Snapshot t as doubles in [spatial..., C] layout.
    Tensor snapshot_tensor(std::size_t t) const;

    /// Throws DataError if any invariant (T >= 2, dt > 0, consistent shape,
    /// channel names, finite conditioning and data) is violated.
    void validate() const;
};

/// A training window: x0 followed by n_S contiguous targets.
struct SequenceWindow {
    std::size_t start = 0;
    Tensor x0;
    std::vector<Tensor> targets;
    std::optional<double> conditioning;
};

void save_corpus(const SnapshotCorpus& corpus, const std::filesystem::path& path);
SnapshotCorpus load_corpus(const std::filesystem::path& path);

/// Header fields as "key: value" lines, as printed by `corpus info`.
std::string describe_corpus(const SnapshotCorpus& corpus);

/// Per-channel min/max over all given corpora mapped to [-1, 1]. All corpora
/// must share channel count; existing normalization is respected (the fit
/// is in physical units).
std::vector<ChannelNormalization> fit_normalization(std::span<const SnapshotCorpus> corpora);

/// Returns the corpus mapped with `params` (physical units in, [-1,1] out).
SnapshotCorpus normalize_with(const SnapshotCorpus& corpus, std::span<const ChannelNormalization> params);
/// Fit on this corpus alone and apply; corpora that are already normalized
/// are returned unchanged.
SnapshotCorpus normalize(const SnapshotCorpus& corpus);
/// Back to physical units; identity on raw corpora.
SnapshotCorpus denormalize(const SnapshotCorpus& corpus);

/// Start index drawn uniformly from [0, T - n_S - 1].
SequenceWindow sample_window(const SnapshotCorpus& corpus, std::size_t n_s, std::mt19937_64& rng);
SequenceWindow window_at(const SnapshotCorpus& corpus, std::size_t start, std::size_t n_s);

/// Every `stride`-th point along each spatial axis.
SnapshotCorpus downsample(const SnapshotCorpus& corpus, std::size_t stride);

/// Reads whitespace separated numbers in row-major order of `layout`
/// ([T, spatial..., C]).
SnapshotCorpus convert_text_dump(const std::filesystem::path& input, const Shape& layout, double dt,
                                 std::optional<double> conditioning, std::vector<std::string> channel_names = {});

} // namespace sak
