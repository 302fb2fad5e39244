// SPDX-License-Identifier: Apache-2.0
#include "sak/manifest.hpp"

#include "sak/errors.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

namespace sak {

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string() + " for hashing");
    std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw DataError("SHA-256 unavailable");
    std::vector<char> buf(1 << 20);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(got)) != 1) {
            throw DataError("SHA-256 update failed");
        }
    }
    if (in.bad()) throw DataError("read error while hashing " + path.string());
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw DataError("SHA-256 finalization failed");
    std::string hex;
    char two[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(two, sizeof two, "%02x", md[i]);
        hex += two;
    }
    return hex;
}

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json RunManifest::to_json() const {
    auto cs = nlohmann::json::array();
    for (const auto& c : corpora) cs.push_back({{"path", c.path}, {"sha256", c.sha256}});
    return {{"version", version},
            {"config", config},
            {"defaults", defaults},
            {"sources", {{"file", sources.file_path}, {"file_text", sources.file_text}, {"overrides", sources.overrides}}},
            {"corpora", cs},
            {"seed", seed},
            {"created", created},
            {"updated", updated}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    try {
        RunManifest m;
        m.version = j.at("version").get<std::string>();
        m.config = j.at("config").get<std::string>();
        m.defaults = j.at("defaults").get<std::string>();
        const auto& s = j.at("sources");
        m.sources.file_path = s.at("file").get<std::string>();
        m.sources.file_text = s.at("file_text").get<std::string>();
        m.sources.overrides = s.at("overrides").get<std::vector<std::string>>();
        for (const auto& c : j.at("corpora")) {
            m.corpora.push_back({c.at("path").get<std::string>(), c.at("sha256").get<std::string>()});
        }
        m.seed = j.at("seed").get<std::uint64_t>();
        m.created = j.at("created").get<std::string>();
        m.updated = j.value("updated", "");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("run manifest is malformed: ") + e.what());
    }
}

TrainConfig effective_config(const ConfigSources& sources) {
    TrainConfig cfg = sources.file_text.empty() ? TrainConfig{} : parse_train_config(sources.file_text);
    for (const auto& o : sources.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
        set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

RunManifest make_manifest(const TrainConfig& cfg, const ConfigSources& sources,
                          const std::vector<std::filesystem::path>& corpora) {
    RunManifest m;
    m.config = format_train_config(cfg);
    m.defaults = format_train_config(TrainConfig{});
    m.sources = sources;
    for (const auto& p : corpora) m.corpora.push_back({p.string(), sha256_file(p)});
    m.seed = cfg.seed;
    m.created = utc_timestamp();
    m.updated = m.created;
    return m;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write " + tmp);
        out << m.to_json().dump(2) << '\n';
        if (!out) throw DataError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest " + path.string());
    try {
        return RunManifest::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
}

void verify_corpora(const RunManifest& m, const std::vector<std::filesystem::path>& corpora) {
    if (corpora.size() != m.corpora.size()) {
        throw DataError("run was recorded with " + std::to_string(m.corpora.size()) + " corpora, got " +
                        std::to_string(corpora.size()));
    }
    for (std::size_t i = 0; i < corpora.size(); ++i) {
        const std::string d = sha256_file(corpora[i]);
        if (d != m.corpora[i].sha256) {
            throw DataError("corpus " + corpora[i].string() + " changed since the run started (sha256 " + d +
                            ", recorded " + m.corpora[i].sha256 + ")");
        }
    }
}

} // namespace sak
