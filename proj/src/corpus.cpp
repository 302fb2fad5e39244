// SPDX-License-Identifier: Apache-2.0
#include "sak/corpus.hpp"

#include "sak/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace sak {

namespace {

constexpr const char* kMagic = "SAKCORPUS 1";

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
    }
    return v;
}

double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw DataError("corrupt header: field '" + key + "' is not a number: '" + text + "'");
    }
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

} // namespace

std::span<const float> SnapshotCorpus::snapshot(std::size_t t) const {
    const std::size_t n = snapshot_size();
    if (t >= steps()) throw std::out_of_range("snapshot index " + std::to_string(t) + " out of range");
    return std::span<const float>(data).subspan(t * n, n);
}

Tensor SnapshotCorpus::snapshot_tensor(std::size_t t) const {
    auto s = snapshot(t);
    return Tensor(snapshot_shape(), std::vector<double>(s.begin(), s.end()));
}

void SnapshotCorpus::validate() const {
    if (spatial_rank != 1 && spatial_rank != 2) throw DataError("spatial rank must be 1 or 2");
    if (shape.size() != spatial_rank + 2) {
        throw DataError("corpus shape " + shape_str(shape) + " does not match spatial rank " +
                        std::to_string(spatial_rank));
    }
    if (shape[0] < 2) throw DataError("corpus needs at least 2 snapshots");
    if (std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; })) {
        throw DataError("corpus shape " + shape_str(shape) + " has an empty dimension");
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DataError("dt must be positive and finite");
    if (data.size() != shape_size(shape)) {
        throw DataError("corpus payload has " + std::to_string(data.size()) + " values, shape " + shape_str(shape) +
                        " needs " + std::to_string(shape_size(shape)));
    }
    if (channel_names.size() != channels()) throw DataError("channel name count does not match channel dimension");
    for (const auto& name : channel_names) {
        if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos) {
            throw DataError("channel names must be non-empty and contain no whitespace");
        }
    }
    if (conditioning && !std::isfinite(*conditioning)) throw DataError("conditioning value must be finite");
    if (!normalization.empty() && normalization.size() != channels()) {
        throw DataError("normalization entry count does not match channel dimension");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) throw DataError("non-finite value in corpus payload at flat index " + std::to_string(i));
    }
}

std::string describe_corpus(const SnapshotCorpus& c) {
    std::ostringstream os;
    os << "shape:";
    for (auto d : c.shape) os << ' ' << d;
    os << "\nrank: " << c.spatial_rank << "\ndt: " << format_double(c.dt) << "\nchannels:";
    for (const auto& n : c.channel_names) os << ' ' << n;
    os << "\nconditioning: " << (c.conditioning ? format_double(*c.conditioning) : std::string("none"));
    os << "\nnormalized: " << (c.normalized() ? 1 : 0);
    if (c.normalized()) {
        os << "\nnorm_shift:";
        for (const auto& n : c.normalization) os << ' ' << format_double(n.shift);
        os << "\nnorm_scale:";
        for (const auto& n : c.normalization) os << ' ' << format_double(n.scale);
        os << "\nnorm_constant:";
        for (const auto& n : c.normalization) os << ' ' << (n.constant ? 1 : 0);
    }
    os << '\n';
    return os.str();
}

void save_corpus(const SnapshotCorpus& corpus, const std::filesystem::path& path) {
    corpus.validate();
    std::string header = std::string(kMagic) + "\n" + describe_corpus(corpus);
    if (header.size() >= kCorpusHeaderBytes) throw DataError("corpus header exceeds " + std::to_string(kCorpusHeaderBytes) + " bytes");
    header.resize(kCorpusHeaderBytes - 1, ' ');
    header.push_back('\n');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<std::uint32_t> words(corpus.data.size());
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(corpus.data[i]));
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (!out) throw DataError("write to '" + path.string() + "' failed");
}

SnapshotCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus '" + path.string() + "'");
    std::string header(kCorpusHeaderBytes, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header.size()));
    if (in.gcount() != static_cast<std::streamsize>(kCorpusHeaderBytes)) {
        throw DataError("corrupt header: '" + path.string() + "' is shorter than the corpus header");
    }
    std::istringstream hs(header);
    std::string line;
    std::getline(hs, line);
    if (line != kMagic) throw DataError("corrupt header: '" + path.string() + "' is not a corpus file");
    std::map<std::string, std::string> fields;
    while (std::getline(hs, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string value = line.substr(colon + 1);
        const auto first = value.find_first_not_of(' ');
        value = first == std::string::npos ? std::string() : value.substr(first);
        while (!value.empty() && value.back() == ' ') value.pop_back();
        fields[line.substr(0, colon)] = value;
    }
    const auto field = [&](const std::string& key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) throw DataError("corrupt header: missing field '" + key + "'");
        return it->second;
    };

    SnapshotCorpus c;
    for (const auto& w : split_ws(field("shape"))) c.shape.push_back(static_cast<std::size_t>(parse_double("shape", w)));
    c.spatial_rank = static_cast<std::size_t>(parse_double("rank", field("rank")));
    c.dt = parse_double("dt", field("dt"));
    c.channel_names = split_ws(field("channels"));
    const std::string& cond = field("conditioning");
    if (cond != "none") c.conditioning = parse_double("conditioning", cond);
    if (field("normalized") == "1") {
        const auto shifts = split_ws(field("norm_shift"));
        const auto scales = split_ws(field("norm_scale"));
        const auto flags = split_ws(field("norm_constant"));
        if (shifts.size() != scales.size() || shifts.size() != flags.size()) {
            throw DataError("corrupt header: normalization fields disagree in length");
        }
        for (std::size_t i = 0; i < shifts.size(); ++i) {
            c.normalization.push_back({parse_double("norm_shift", shifts[i]), parse_double("norm_scale", scales[i]),
                                       flags[i] == "1"});
        }
    }
    if (c.shape.size() < 3) throw DataError("corrupt header: shape needs at least 3 dimensions");

    const std::size_t n = shape_size(c.shape);
    std::vector<std::uint32_t> words(n);
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * 4));
    if (in.gcount() != static_cast<std::streamsize>(n * 4)) {
        throw DataError("payload of '" + path.string() + "' is shorter than header shape " + shape_str(c.shape));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw DataError("payload of '" + path.string() + "' is longer than header shape " + shape_str(c.shape));
    }
    c.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.data[i] = std::bit_cast<float>(to_le(words[i]));
    c.validate();
    return c;
}

std::vector<ChannelNormalization> fit_normalization(std::span<const SnapshotCorpus> corpora) {
    if (corpora.empty()) throw DataError("no corpora to fit normalization on");
    const std::size_t nc = corpora.front().channels();
    std::vector<double> lo(nc, std::numeric_limits<double>::infinity());
    std::vector<double> hi(nc, -std::numeric_limits<double>::infinity());
    for (const auto& c : corpora) {
        if (c.channels() != nc) throw DataError("corpora disagree in channel count");
        for (std::size_t i = 0; i < c.data.size(); ++i) {
            const std::size_t ch = i % nc;
            double v = c.data[i];
            if (!std::isfinite(v)) throw DataError("non-finite value in corpus");
            if (c.normalized()) v = v * c.normalization[ch].scale + c.normalization[ch].shift;
            lo[ch] = std::min(lo[ch], v);
            hi[ch] = std::max(hi[ch], v);
        }
    }
    std::vector<ChannelNormalization> params(nc);
    for (std::size_t ch = 0; ch < nc; ++ch) {
        if (hi[ch] > lo[ch]) {
            params[ch].shift = 0.5 * (hi[ch] + lo[ch]);
            params[ch].scale = 0.5 * (hi[ch] - lo[ch]);
        } else {
            params[ch].shift = lo[ch];
            params[ch].scale = 1.0;
            params[ch].constant = true;
        }
    }
    return params;
}

SnapshotCorpus normalize_with(const SnapshotCorpus& corpus, std::span<const ChannelNormalization> params) {
    const std::size_t nc = corpus.channels();
    if (params.size() != nc) throw DataError("normalization parameters do not match channel count");
    SnapshotCorpus out = corpus;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const std::size_t ch = i % nc;
        double v = corpus.data[i];
        if (corpus.normalized()) v = v * corpus.normalization[ch].scale + corpus.normalization[ch].shift;
        out.data[i] = static_cast<float>((v - params[ch].shift) / params[ch].scale);
    }
    out.normalization.assign(params.begin(), params.end());
    return out;
}

SnapshotCorpus normalize(const SnapshotCorpus& corpus) {
    if (corpus.normalized()) return corpus;
    const auto params = fit_normalization(std::span<const SnapshotCorpus>(&corpus, 1));
    return normalize_with(corpus, params);
}

SnapshotCorpus denormalize(const SnapshotCorpus& corpus) {
    if (!corpus.normalized()) return corpus;
    SnapshotCorpus out = corpus;
    const std::size_t nc = corpus.channels();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const auto& p = corpus.normalization[i % nc];
        out.data[i] = static_cast<float>(static_cast<double>(corpus.data[i]) * p.scale + p.shift);
    }
    out.normalization.clear();
    return out;
}

SequenceWindow window_at(const SnapshotCorpus& corpus, std::size_t start, std::size_t n_s) {
    if (n_s == 0 || start + n_s >= corpus.steps()) {
        throw ConfigError("window [" + std::to_string(start) + ", " + std::to_string(start + n_s) +
                                    "] does not fit a corpus of " + std::to_string(corpus.steps()) + " snapshots");
    }
    SequenceWindow w;
    w.start = start;
    w.x0 = corpus.snapshot_tensor(start);
    w.targets.reserve(n_s);
    for (std::size_t k = 1; k <= n_s; ++k) w.targets.push_back(corpus.snapshot_tensor(start + k));
    w.conditioning = corpus.conditioning;
    return w;
}

SequenceWindow sample_window(const SnapshotCorpus& corpus, std::size_t n_s, std::mt19937_64& rng) {
    if (n_s == 0 || n_s + 1 > corpus.steps()) {
        throw ConfigError("sequence length " + std::to_string(n_s) + " needs at least " +
                                    std::to_string(n_s + 1) + " snapshots, corpus has " +
                                    std::to_string(corpus.steps()));
    }
    std::uniform_int_distribution<std::size_t> pick(0, corpus.steps() - n_s - 1);
    return window_at(corpus, pick(rng), n_s);
}

SnapshotCorpus downsample(const SnapshotCorpus& corpus, std::size_t stride) {
    if (stride == 0) throw ConfigError("downsample stride must be positive");
    SnapshotCorpus out = corpus;
    const std::size_t t = corpus.steps();
    const std::size_t nc = corpus.channels();
    if (corpus.spatial_rank == 1) {
        const std::size_t l = corpus.shape[1];
        const std::size_t nl = (l + stride - 1) / stride;
        out.shape = {t, nl, nc};
        out.data.resize(t * nl * nc);
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t i = 0; i < nl; ++i)
                for (std::size_t c = 0; c < nc; ++c)
                    out.data[(s * nl + i) * nc + c] = corpus.data[(s * l + i * stride) * nc + c];
    } else {
        const std::size_t h = corpus.shape[1], w = corpus.shape[2];
        const std::size_t nh = (h + stride - 1) / stride, nw = (w + stride - 1) / stride;
        out.shape = {t, nh, nw, nc};
        out.data.resize(t * nh * nw * nc);
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t i = 0; i < nh; ++i)
                for (std::size_t j = 0; j < nw; ++j)
                    for (std::size_t c = 0; c < nc; ++c)
                        out.data[((s * nh + i) * nw + j) * nc + c] =
                            corpus.data[((s * h + i * stride) * w + j * stride) * nc + c];
    }
    return out;
}

SnapshotCorpus convert_text_dump(const std::filesystem::path& input, const Shape& layout, double dt,
                                 std::optional<double> conditioning, std::vector<std::string> channel_names) {
    if (layout.size() != 3 && layout.size() != 4) throw ConfigError("layout must be T,L,C or T,H,W,C");
    std::ifstream in(input);
    if (!in) throw DataError("cannot open raw input '" + input.string() + "'");
    SnapshotCorpus c;
    c.shape = layout;
    c.spatial_rank = layout.size() - 2;
    c.dt = dt;
    c.conditioning = conditioning;
    const std::size_t n = shape_size(layout);
    c.data.reserve(n);
    for (std::string tok; in >> tok;) {
        if (c.data.size() == n) throw DataError("raw input has more values than layout " + shape_str(layout));
        try {
            c.data.push_back(static_cast<float>(std::stod(tok)));
        } catch (const std::exception&) {
            throw DataError("raw input contains a non-numeric token '" + tok + "'");
        }
    }
    if (c.data.size() != n) {
        throw DataError("raw input has " + std::to_string(c.data.size()) + " values, layout " + shape_str(layout) +
                        " needs " + std::to_string(n));
    }
    if (channel_names.empty()) {
        for (std::size_t i = 0; i < layout.back(); ++i) channel_names.push_back("c" + std::to_string(i));
    }
    c.channel_names = std::move(channel_names);
    c.validate();
    return c;
}

} // namespace sak
