// SPDX-License-Identifier: Apache-2.0
//
// Reproducibility record written into every training run directory.
#pragma once

#include "sak/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sak {

inline constexpr const char* kArtifactVersion = "1.0.0";

/// Current UTC time as ISO 8601, e.g. "2024-01-31T12:00:00Z".
std::string utc_timestamp();

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct CorpusDigest {
    std::string path;
    std::string sha256;
};

/// Where each config value came from; the effective config is
/// defaults, then file, then overrides.
struct ConfigSources {
    std::string file_path;
    std::string file_text;
    std::vector<std::string> overrides; ///< "key=value", in application order
};

struct RunManifest {
    std::string version = kArtifactVersion;
    std::string config;   ///< effective config, format_train_config text
    std::string defaults; ///< built-in defaults, same format
    ConfigSources sources;
    std::vector<CorpusDigest> corpora;
    std::uint64_t seed = 0;
    std::string created;
    std::string updated;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

RunManifest make_manifest(const TrainConfig& cfg, const ConfigSources& sources,
                          const std::vector<std::filesystem::path>& corpora);

void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

/// Throws DataError unless the files hash to the recorded digests, in order.
void verify_corpora(const RunManifest& m, const std::vector<std::filesystem::path>& corpora);

/// Applies "key=value" overrides to cfg and validates the result.
TrainConfig effective_config(const ConfigSources& sources);

} // namespace sak
