// SPDX-License-Identifier: Apache-2.0
#include "sak/evaluate.hpp"

#include "sak/errors.hpp"
#include "sak/latent.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace sak {

using ad::Var;

namespace {

SnapshotCorpus physical(const SnapshotCorpus& c) { return denormalize(c); }

// Decodes the rows of [rows, M] in evaluation mode; returns cropped snapshots.
std::vector<Tensor> decode_rows(const SakModel& model, const Tensor& z) {
    ad::GradModeGuard off(false);
    const Var out = crop_to_input(model.decode(Var::constant(z), ForwardContext{}), model.arch());
    std::vector<Tensor> snaps;
    for (std::size_t r = 0; r < z.dim(0); ++r) snaps.push_back(from_model_layout(out.value(), r, model.arch()));
    return snaps;
}

SnapshotCorpus empty_like(const SnapshotCorpus& c, std::size_t steps) {
    SnapshotCorpus out;
    out.shape = c.shape;
    out.shape[0] = steps;
    out.data.reserve(steps * c.snapshot_size());
    out.dt = c.dt;
    out.spatial_rank = c.spatial_rank;
    out.channel_names = c.channel_names;
    out.conditioning = c.conditioning;
    return out;
}

SnapshotCorpus slice_steps(const SnapshotCorpus& c, std::size_t first, std::size_t count) {
    SnapshotCorpus out = empty_like(c, count);
    const std::size_t per = c.snapshot_size();
    out.data.assign(c.data.begin() + static_cast<std::ptrdiff_t>(first * per),
                    c.data.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
    return out;
}

struct Prepared {
    SnapshotCorpus phys;
    std::optional<double> cond;
};

Prepared prepare(const SakModel& model, std::span<const ChannelNormalization> normalization,
                 const SnapshotCorpus& corpus, const RolloutOptions& opts) {
    corpus.validate();
    const ArchConfig& arch = model.arch();
    Shape expect = arch.input_shape;
    expect.push_back(arch.channels);
    if (corpus.snapshot_shape() != expect) {
        throw DataError("corpus snapshot shape " + shape_str(corpus.snapshot_shape()) + " does not match model " +
                        shape_str(expect));
    }
    if (normalization.size() != arch.channels) throw DataError("normalization does not match the channel count");
    if (opts.cycle_len == 0 || opts.n_cycles == 0) throw ConfigError("cycle length and count must be positive");
    const std::size_t need = opts.start + opts.cycle_len * opts.n_cycles + 1;
    if (corpus.steps() < need) {
        throw DataError("rollout of " + std::to_string(opts.cycle_len * opts.n_cycles) + " steps from index " +
                        std::to_string(opts.start) + " needs " + std::to_string(need) + " snapshots, corpus has " +
                        std::to_string(corpus.steps()));
    }
    Prepared p{physical(corpus), opts.conditioning ? opts.conditioning : corpus.conditioning};
    if (arch.conditioned && !p.cond) throw ConfigError("conditioned model needs a conditioning value");
    if (!arch.conditioned) p.cond.reset();
    return p;
}

using CycleFn = std::function<Tensor(const GaussianLatent&, std::size_t)>;

// Shared cycle driver; `latents` produces the [cycle_len, M] rows to decode.
RolloutResult run_cycles(const SakModel& model, std::span<const ChannelNormalization> normalization,
                         const Prepared& p, const RolloutOptions& opts, const CycleFn& latents) {
    const Shape snap = p.phys.snapshot_shape();
    const std::size_t per = p.phys.snapshot_size(), steps = opts.cycle_len * opts.n_cycles;
    RolloutResult r;
    r.cycle_len = opts.cycle_len;
    r.n_cycles = opts.n_cycles;
    r.predictions = empty_like(p.phys, steps);
    r.predictions.conditioning = p.cond;
    r.ground_truth = slice_steps(p.phys, opts.start + 1, steps);

    auto seed_span = p.phys.snapshot(opts.start);
    std::vector<double> seed(seed_span.begin(), seed_span.end());
    for (std::size_t cycle = 0; cycle < opts.n_cycles; ++cycle) {
        const GaussianLatent z0 = model.encode(to_model_units(seed, snap, normalization));
        const auto decoded = decode_rows(model, latents(z0, cycle));
        for (std::size_t k = 0; k < decoded.size(); ++k) {
            const auto phys = to_physical_units(decoded[k], normalization);
            for (double v : phys) {
                if (!std::isfinite(v)) {
                    throw NumericalError("non-finite prediction at step " +
                                         std::to_string(cycle * opts.cycle_len + k + 1));
                }
                r.predictions.data.push_back(static_cast<float>(v));
            }
            if (k + 1 == decoded.size()) seed = phys;
        }
    }
    if (r.predictions.data.size() != steps * per) throw std::logic_error("rollout produced the wrong size");
    r.mae_per_step = mae_per_snapshot(r.predictions, r.ground_truth);
    return r;
}

} // namespace

Tensor to_model_units(std::span<const double> phys, const Shape& snapshot,
                      std::span<const ChannelNormalization> normalization) {
    Tensor t(snapshot);
    const std::size_t nc = normalization.size();
    if (t.size() != phys.size() || nc == 0) throw std::invalid_argument("snapshot size mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = (phys[i] - normalization[i % nc].shift) / normalization[i % nc].scale;
    }
    return t;
}

std::vector<double> to_physical_units(const Tensor& t, std::span<const ChannelNormalization> normalization) {
    std::vector<double> out(t.size());
    const std::size_t nc = normalization.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = t[i] * normalization[i % nc].scale + normalization[i % nc].shift;
    }
    return out;
}

RolloutResult rollout_cycles(const SakModel& model, std::span<const ChannelNormalization> normalization,
                             const SnapshotCorpus& corpus, const RolloutOptions& opts) {
    const Prepared p = prepare(model, normalization, corpus, opts);
    const std::size_t m = model.arch().latent_dim;
    const Conditioning cond{p.cond};
    const OperatorFn op = [&](const GaussianLatent& s) { return model.aux_forward(s, cond); };
    return run_cycles(model, normalization, p, opts, [&](const GaussianLatent& z0, std::size_t) {
        const auto states = rollout(z0, opts.cycle_len, op, opts.regenerate_koopman);
        Tensor z(Shape{opts.cycle_len, m});
        for (std::size_t k = 0; k < states.size(); ++k) {
            const auto row = opts.rng ? sample_latent(states[k], *opts.rng) : states[k].mu;
            std::copy(row.begin(), row.end(), z.data().begin() + k * m);
        }
        return z;
    });
}

RolloutResult autoencode_hold_baseline(const SakModel& model, std::span<const ChannelNormalization> normalization,
                                       const SnapshotCorpus& corpus, const RolloutOptions& opts) {
    const Prepared p = prepare(model, normalization, corpus, opts);
    const std::size_t m = model.arch().latent_dim;
    return run_cycles(model, normalization, p, opts, [&](const GaussianLatent& z0, std::size_t) {
        Tensor z(Shape{opts.cycle_len, m});
        for (std::size_t k = 0; k < opts.cycle_len; ++k) std::copy(z0.mu.begin(), z0.mu.end(), z.data().begin() + k * m);
        return z;
    });
}

RolloutResult hold_initial_baseline(const SnapshotCorpus& corpus, std::size_t steps, std::size_t start) {
    corpus.validate();
    if (steps == 0 || corpus.steps() < start + steps + 1) throw DataError("corpus too short for the baseline");
    const SnapshotCorpus phys = physical(corpus);
    RolloutResult r;
    r.cycle_len = steps;
    r.n_cycles = 1;
    r.ground_truth = slice_steps(phys, start + 1, steps);
    r.predictions = empty_like(phys, steps);
    const auto seed = phys.snapshot(start);
    for (std::size_t k = 0; k < steps; ++k) r.predictions.data.insert(r.predictions.data.end(), seed.begin(), seed.end());
    r.mae_per_step = mae_per_snapshot(r.predictions, r.ground_truth);
    return r;
}

std::vector<double> mae_per_snapshot(const SnapshotCorpus& a, const SnapshotCorpus& b) {
    if (a.shape != b.shape) throw std::invalid_argument("MAE operands differ in shape");
    const std::size_t per = a.snapshot_size();
    std::vector<double> out(a.steps());
    for (std::size_t t = 0; t < a.steps(); ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            s += std::abs(static_cast<double>(a.data[t * per + i]) - static_cast<double>(b.data[t * per + i]));
        }
        out[t] = s / static_cast<double>(per);
    }
    return out;
}

std::vector<double> mae_curve(const RolloutResult& result) { return result.mae_per_step; }

void write_mae_table(const RolloutResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# step mae (physical units, cycle_len=" << result.cycle_len << ", n_cycles=" << result.n_cycles
        << ")\n";
    char buf[64];
    for (std::size_t k = 0; k < result.mae_per_step.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%zu %.9g\n", k + 1, result.mae_per_step[k]);
        out << buf;
    }
    if (!out) throw DataError("write failed for " + path.string());
}

StochasticMae stochastic_mae(const SakModel& model, std::span<const ChannelNormalization> normalization,
                             const SnapshotCorpus& corpus, RolloutOptions opts, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw ConfigError("stochastic evaluation needs at least one sample");
    std::mt19937_64 rng(seed);
    opts.rng = &rng;
    std::vector<std::vector<double>> curves;
    for (std::size_t i = 0; i < k; ++i) curves.push_back(rollout_cycles(model, normalization, corpus, opts).mae_per_step);
    StochasticMae s;
    const std::size_t n = curves.front().size();
    s.mean.assign(n, 0.0);
    s.stddev.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        for (const auto& c : curves) s.mean[t] += c[t];
        s.mean[t] /= static_cast<double>(k);
        for (const auto& c : curves) s.stddev[t] += (c[t] - s.mean[t]) * (c[t] - s.mean[t]);
        s.stddev[t] = std::sqrt(s.stddev[t] / static_cast<double>(k));
    }
    return s;
}

// ---- figures ---------------------------------------------------------------

void Image::set(std::size_t x, std::size_t y, const std::array<unsigned char, 3>& c) {
    if (x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>((y * width + x) * 3));
}

void write_png(const Image& img, const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw DataError("cannot read " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng initialization failed");
    }
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG decoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path.string() + " is not an 8-bit RGB image");
    }
    img = Image(png_get_image_width(png, info), png_get_image_height(png, info));
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.rgb.data() + y * img.width * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

namespace {

using Rgb = std::array<unsigned char, 3>;

Rgb lerp_palette(const std::vector<Rgb>& stops, double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const double pos = t * static_cast<double>(stops.size() - 1);
    const std::size_t i = std::min(static_cast<std::size_t>(pos), stops.size() - 2);
    const double f = pos - static_cast<double>(i);
    Rgb c;
    for (int k = 0; k < 3; ++k) {
        c[k] = static_cast<unsigned char>(std::lround((1.0 - f) * stops[i][k] + f * stops[i + 1][k]));
    }
    return c;
}

const std::vector<Rgb> kSequential = {
    {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
const std::vector<Rgb> kDiverging = {{59, 76, 192}, {221, 221, 221}, {180, 4, 38}};

void blit(Image& dst, const Image& src, std::size_t x0, std::size_t y0) {
    for (std::size_t y = 0; y < src.height; ++y) {
        std::copy_n(src.rgb.begin() + static_cast<std::ptrdiff_t>(y * src.width * 3), src.width * 3,
                    dst.rgb.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * dst.width + x0) * 3));
    }
}

constexpr std::size_t kGap = 8;

Image stack_vertical(const std::vector<Image>& panels) {
    std::size_t h = 0;
    for (const auto& p : panels) h += p.height;
    Image out(panels.front().width, h + kGap * (panels.size() - 1));
    std::size_t y = 0;
    for (const auto& p : panels) {
        blit(out, p, 0, y);
        y += p.height + kGap;
    }
    return out;
}

Image stack_horizontal(const std::vector<Image>& panels) {
    std::size_t w = 0;
    for (const auto& p : panels) w += p.width;
    Image out(w + kGap * (panels.size() - 1), panels.front().height);
    std::size_t x = 0;
    for (const auto& p : panels) {
        blit(out, p, x, 0);
        x += p.width + kGap;
    }
    return out;
}

void line(Image& img, long x0, long y0, long x1, long y1, const Rgb& c) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
        if (x0 >= 0 && y0 >= 0) img.set(static_cast<std::size_t>(x0), static_cast<std::size_t>(y0), c);
        if (x0 == x1 && y0 == y1) break;
        const long e2 = 2 * err;
        if (e2 >= dy) err += dy, x0 += sx;
        if (e2 <= dx) err += dx, y0 += sy;
    }
}

std::pair<double, double> range_of(std::span<const double> a, std::span<const double> b) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!(hi > lo)) hi = lo + 1.0;
    return {lo, hi};
}

Image triplet(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t rows, std::size_t cols,
              bool vertical) {
    std::vector<double> err(pred.size());
    double emax = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        err[i] = gt[i] - pred[i];
        emax = std::max(emax, std::abs(err[i]));
    }
    if (!(emax > 0.0)) emax = 1.0;
    const auto [lo, hi] = range_of(pred, gt);
    const std::vector<Image> panels{heatmap(pred, rows, cols, lo, hi, false), heatmap(gt, rows, cols, lo, hi, false),
                                    heatmap(err, rows, cols, -emax, emax, true)};
    return vertical ? stack_vertical(panels) : stack_horizontal(panels);
}

std::string channel_label(const SnapshotCorpus& c, std::size_t ch) {
    return ch < c.channel_names.size() && !c.channel_names[ch].empty() ? c.channel_names[ch] : "c" + std::to_string(ch);
}

} // namespace

Image heatmap(std::span<const double> field, std::size_t rows, std::size_t cols, double lo, double hi,
              bool diverging) {
    if (field.size() != rows * cols) throw std::invalid_argument("heatmap extent mismatch");
    Image img(cols, rows);
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double t = (field[r * cols + c] - lo) / span;
            img.set(c, r, lerp_palette(diverging ? kDiverging : kSequential, t));
        }
    }
    return img;
}

Image line_plot(const std::vector<Series>& series, std::size_t width, std::size_t height) {
    static const std::vector<Rgb> colors = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                            {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127}};
    const std::size_t margin = 40;
    if (width <= 2 * margin || height <= 2 * margin) throw std::invalid_argument("plot too small");
    Image img(width, height);
    const Rgb axis{0, 0, 0};
    const long left = static_cast<long>(margin), bottom = static_cast<long>(height - margin);
    const long right = static_cast<long>(width - margin), top = static_cast<long>(margin);
    line(img, left, bottom, right, bottom, axis);
    line(img, left, bottom, left, top, axis);
    double ymax = 0.0;
    std::size_t n = 0;
    for (const auto& s : series) {
        for (double v : s.values) {
            if (std::isfinite(v)) ymax = std::max(ymax, v);
        }
        n = std::max(n, s.values.size());
    }
    if (!(ymax > 0.0)) ymax = 1.0;
    ymax *= 1.05;
    const double xs = n > 1 ? static_cast<double>(right - left) / static_cast<double>(n - 1) : 0.0;
    const double ys = static_cast<double>(bottom - top) / ymax;
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& v = series[k].values;
        const Rgb c = colors[k % colors.size()];
        auto px = [&](std::size_t i) {
            const double y = std::isfinite(v[i]) ? std::min(v[i], ymax) : ymax;
            return std::pair<long, long>{left + std::lround(xs * static_cast<double>(i)), bottom - std::lround(ys * y)};
        };
        for (std::size_t i = 0; i + 1 < v.size(); ++i) {
            const auto [x0, y0] = px(i);
            const auto [x1, y1] = px(i + 1);
            line(img, x0, y0, x1, y1, c);
        }
        if (v.size() == 1) {
            const auto [x0, y0] = px(0);
            line(img, x0 - 2, y0, x0 + 2, y0, c);
        }
    }
    return img;
}

std::vector<std::filesystem::path> emit_figures(const RolloutResult& result, const std::filesystem::path& outdir,
                                                const std::vector<std::size_t>& steps) {
    std::error_code ec;
    std::filesystem::create_directories(outdir, ec);
    if (ec) throw DataError("cannot create " + outdir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    const SnapshotCorpus& pred = result.predictions;
    const SnapshotCorpus& gt = result.ground_truth;
    const std::size_t nc = pred.channels(), per = pred.snapshot_size(), npts = pred.spatial_points();
    const std::size_t total = pred.steps();
    if (pred.spatial_rank == 1) {
        // rows: space, columns: step
        for (std::size_t ch = 0; ch < nc; ++ch) {
            std::vector<double> p(npts * total), g(npts * total);
            for (std::size_t t = 0; t < total; ++t) {
                for (std::size_t x = 0; x < npts; ++x) {
                    p[x * total + t] = pred.data[t * per + x * nc + ch];
                    g[x * total + t] = gt.data[t * per + x * nc + ch];
                }
            }
            const auto path =
                outdir / (nc == 1 ? std::string("spacetime.png") : "spacetime_" + channel_label(pred, ch) + ".png");
            write_png(triplet(p, g, npts, total, true), path);
            written.push_back(path);
        }
    } else {
        const std::size_t rows = pred.shape[1], cols = pred.shape[2];
        for (std::size_t step : steps) {
            if (step == 0 || step > total) {
                throw ConfigError("figure step " + std::to_string(step) + " outside 1.." + std::to_string(total));
            }
            const std::size_t t = step - 1;
            for (std::size_t ch = 0; ch < nc; ++ch) {
                std::vector<double> p(npts), g(npts);
                for (std::size_t i = 0; i < npts; ++i) {
                    p[i] = pred.data[t * per + i * nc + ch];
                    g[i] = gt.data[t * per + i * nc + ch];
                }
                const auto path = outdir / ("step" + std::to_string(step) + "_" + channel_label(pred, ch) + ".png");
                write_png(triplet(p, g, rows, cols, false), path);
                written.push_back(path);
            }
        }
    }
    const auto mae_path = outdir / "mae.png";
    write_png(line_plot({{"mae", result.mae_per_step}}), mae_path);
    written.push_back(mae_path);
    return written;
}

// ---- sweeps ----------------------------------------------------------------

void validate_sweep_values(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep needs at least one lambda_gan value");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= 0.0) || !std::isfinite(values[i])) {
            throw ConfigError("lambda_gan values must be finite and non-negative");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (values[i] == values[j]) throw ConfigError("duplicate lambda_gan value " + sweep_label(values[i]));
        }
    }
}

std::string sweep_label(double lambda_gan) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "lambda_gan=%.6g", lambda_gan);
    return buf;
}

void write_sweep_table(const std::vector<Series>& columns, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# step";
    std::size_t rows = 0;
    for (const auto& c : columns) {
        out << ' ' << c.label;
        rows = std::max(rows, c.values.size());
    }
    out << "  (mae, physical units)\n";
    char buf[64];
    for (std::size_t k = 0; k < rows; ++k) {
        out << k + 1;
        for (const auto& c : columns) {
            if (k < c.values.size()) {
                std::snprintf(buf, sizeof buf, " %.9g", c.values[k]);
                out << buf;
            } else {
                out << " nan";
            }
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

std::vector<double> read_mae_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::size_t step = 0;
        double v = 0.0;
        if (std::sscanf(line.c_str(), "%zu %lf", &step, &v) != 2 || step != out.size() + 1) {
            throw DataError(path.string() + " is not an MAE table");
        }
        out.push_back(v);
    }
    return out;
}

} // namespace sak
