// SPDX-License-Identifier: Apache-2.0
#include "sak/networks.hpp"

#include "sak/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace sak {

using ad::Var;

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'A', 'K', 'C', 'K', 'P', 'T', '1'};
constexpr int kCheckpointVersion = 1;

// He-scaled normal truncated at two standard deviations; the divisor restores
// the variance lost to truncation.
Tensor fan_in_truncated(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in)) / 0.87962566103423978;
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t(shape, 0.0);
    for (auto& v : t.data()) {
        double z = normal(rng);
        while (std::abs(z) > 2.0) z = normal(rng);
        v = z * stddev;
    }
    return t;
}

Var channel_bias(const Var& y, const Var& bias) {
    return ad::add(y, ad::reshape(bias, Shape{1, bias.size(), 1, 1}));
}

void check_rank4(const Var& x, std::size_t channels, const char* who) {
    if (x.shape().size() != 4 || x.dim(1) != channels) {
        throw std::invalid_argument(std::string(who) + ": expected [N, " + std::to_string(channels) +
                                    ", H, W], got " + shape_str(x.shape()));
    }
}

Var flatten(const Var& x) {
    const std::size_t n = x.dim(0);
    return ad::reshape(x, Shape{n, x.size() / n});
}

Var dropout(const Var& x, double keep, const ForwardContext& ctx) {
    if (!ctx.training || keep >= 1.0) return x;
    if (ctx.rng == nullptr) throw std::invalid_argument("dropout: training pass without an RNG");
    std::bernoulli_distribution coin(keep);
    Tensor mask(x.shape(), 0.0);
    for (auto& m : mask.data()) m = coin(*ctx.rng) ? 1.0 / keep : 0.0;
    return ad::mul_const(x, mask);
}

struct Kernel {
    std::size_t kh, kw, sh, sw;
};

Kernel kernel_for(std::size_t rank, std::size_t k, std::size_t stride) {
    if (rank == 1) return {1, k, 1, stride};
    return {k, k, stride, stride};
}

} // namespace

// ---- ArchConfig ------------------------------------------------------------

void ArchConfig::validate() const {
    if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
    if (spatial_rank != 1 && spatial_rank != 2) throw ConfigError("spatial_rank must be 1 or 2");
    if (input_shape.size() != spatial_rank) {
        throw ConfigError("input_shape " + shape_str(input_shape) + " does not have rank " +
                          std::to_string(spatial_rank));
    }
    for (auto d : input_shape) {
        if (d == 0) throw ConfigError("input_shape has a zero extent");
    }
    if (channels == 0) throw ConfigError("channels must be positive");
    if (encoder_filters.empty()) throw ConfigError("encoder_filters must not be empty");
    if (disc_filters.empty() || disc_filters.size() > encoder_filters.size()) {
        throw ConfigError("disc_filters needs between 1 and " + std::to_string(encoder_filters.size()) +
                          " entries");
    }
    for (auto f : encoder_filters) {
        if (f == 0) throw ConfigError("encoder filter width must be positive");
    }
    for (auto f : aux_widths) {
        if (f == 0) throw ConfigError("aux width must be positive");
    }
    for (auto f : disc_filters) {
        if (f == 0) throw ConfigError("critic filter width must be positive");
    }
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("dropout_keep must be in (0, 1]");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must be in [0, 1)");
    if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
    if (disc_sequence == 0) throw ConfigError("disc_sequence must be positive");
}

Shape ArchConfig::padded_shape() const {
    const std::size_t f = stride_factor();
    Shape p;
    for (auto d : input_shape) p.push_back((d + f - 1) / f * f);
    return p;
}

Shape ArchConfig::bottleneck_shape() const {
    Shape b = padded_shape();
    for (auto& d : b) d /= stride_factor();
    return b;
}

std::size_t ArchConfig::flatten_width() const {
    return encoder_filters.back() * shape_size(bottleneck_shape());
}

std::vector<std::size_t> ArchConfig::decoder_filters() const {
    std::vector<std::size_t> f(encoder_filters.rbegin() + 1, encoder_filters.rend());
    f.push_back(channels);
    return f;
}

nlohmann::json to_json(const ArchConfig& a) {
    return {{"latent_dim", a.latent_dim},
            {"spatial_rank", a.spatial_rank},
            {"channels", a.channels},
            {"input_shape", a.input_shape},
            {"koopman_form", to_string(a.koopman_form)},
            {"conditioned", a.conditioned},
            {"dropout_keep", a.dropout_keep},
            {"leaky_slope", a.leaky_slope},
            {"bn_momentum", a.bn_momentum},
            {"bn_eps", a.bn_eps},
            {"encoder_filters", a.encoder_filters},
            {"aux_widths", a.aux_widths},
            {"disc_filters", a.disc_filters},
            {"disc_sequence", a.disc_sequence}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
    try {
        ArchConfig a;
        a.latent_dim = j.at("latent_dim").get<std::size_t>();
        a.spatial_rank = j.at("spatial_rank").get<std::size_t>();
        a.channels = j.at("channels").get<std::size_t>();
        a.input_shape = j.at("input_shape").get<Shape>();
        a.koopman_form = koopman_form_from_string(j.at("koopman_form").get<std::string>());
        a.conditioned = j.at("conditioned").get<bool>();
        a.dropout_keep = j.at("dropout_keep").get<double>();
        a.leaky_slope = j.at("leaky_slope").get<double>();
        a.bn_momentum = j.at("bn_momentum").get<double>();
        a.bn_eps = j.at("bn_eps").get<double>();
        a.encoder_filters = j.at("encoder_filters").get<std::vector<std::size_t>>();
        a.aux_widths = j.at("aux_widths").get<std::vector<std::size_t>>();
        a.disc_filters = j.at("disc_filters").get<std::vector<std::size_t>>();
        a.disc_sequence = j.at("disc_sequence").get<std::size_t>();
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("architecture record is malformed: ") + e.what());
    }
}

// ---- layers ----------------------------------------------------------------

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw,
               std::mt19937_64& init)
    : weight(Var::parameter(fan_in_truncated(Shape{out, in * kh * kw}, in * kh * kw, init))),
      bias(Var::parameter(Tensor(Shape{out}, 0.0))),
      in_(in), out_(out), kh_(kh), kw_(kw), sh_(sh), sw_(sw) {}

Var Conv2d::forward(const Var& x) const {
    check_rank4(x, in_, "conv");
    const std::size_t n = x.dim(0);
    const auto g = ad::ConvGeometry::same(n, in_, x.dim(2), x.dim(3), kh_, kw_, sh_, sw_);
    Var y = ad::matmul(weight, ad::im2col(x, g));
    y = ad::permute(ad::reshape(y, Shape{out_, n, g.out_h, g.out_w}), {1, 0, 2, 3});
    return channel_bias(y, bias);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".kernel", weight, true});
    out.push_back({prefix + ".bias", bias, false});
}

Deconv2d::Deconv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t sh,
                   std::size_t sw, std::mt19937_64& init)
    : weight(Var::parameter(fan_in_truncated(Shape{out * kh * kw, in}, in * kh * kw, init))),
      bias(Var::parameter(Tensor(Shape{out}, 0.0))),
      in_(in), out_(out), kh_(kh), kw_(kw), sh_(sh), sw_(sw) {}

Var Deconv2d::forward(const Var& x) const {
    check_rank4(x, in_, "deconv");
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto g = ad::ConvGeometry::same(n, out_, h * sh_, w * sw_, kh_, kw_, sh_, sw_);
    const Var cols_in = ad::reshape(ad::permute(x, {1, 0, 2, 3}), Shape{in_, n * h * w});
    return channel_bias(ad::col2im(ad::matmul(weight, cols_in), g), bias);
}

void Deconv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".kernel", weight, true});
    out.push_back({prefix + ".bias", bias, false});
}

BatchNorm::BatchNorm(std::size_t channels, double momentum, double eps)
    : gamma(Var::parameter(Tensor(Shape{channels}, 1.0))),
      beta(Var::parameter(Tensor(Shape{channels}, 0.0))),
      running_mean(Var::constant(Tensor(Shape{channels}, 0.0))),
      running_var(Var::constant(Tensor(Shape{channels}, 1.0))),
      channels_(channels), momentum_(momentum), eps_(eps) {}

Var BatchNorm::forward(const Var& x, const ForwardContext& ctx) const {
    check_rank4(x, channels_, "batch norm");
    const Shape cshape{1, channels_, 1, 1};
    Var mean, var;
    if (ctx.training) {
        const double count = static_cast<double>(x.size() / channels_);
        mean = ad::scale(ad::sum_to(x, cshape), 1.0 / count);
        var = ad::scale(ad::sum_to(ad::square(ad::sub(x, mean)), cshape), 1.0 / count);
        if (ctx.update_stats) {
            Var rmv = running_mean, rvv = running_var;
            Tensor& rm = rmv.mutable_value();
            Tensor& rv = rvv.mutable_value();
            for (std::size_t c = 0; c < channels_; ++c) {
                rm[c] = momentum_ * rm[c] + (1.0 - momentum_) * mean.value()[c];
                rv[c] = momentum_ * rv[c] + (1.0 - momentum_) * var.value()[c];
            }
        }
    } else {
        mean = Var::constant(running_mean.value().reshaped(cshape));
        var = Var::constant(running_var.value().reshaped(cshape));
    }
    const Var xhat = ad::div(ad::sub(x, mean), ad::sqrt(ad::add_scalar(var, eps_)));
    return ad::add(ad::mul(xhat, ad::reshape(gamma, cshape)), ad::reshape(beta, cshape));
}

void BatchNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma, false});
    out.push_back({prefix + ".beta", beta, false});
}

void BatchNorm::collect_buffers(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
}

Dense::Dense(std::size_t in, std::size_t out, std::mt19937_64& init, bool zero_init)
    : weight(Var::parameter(zero_init ? Tensor(Shape{in, out}, 0.0) : fan_in_truncated(Shape{in, out}, in, init))),
      bias(Var::parameter(Tensor(Shape{out}, 0.0))) {}

Var Dense::forward(const Var& x) const {
    if (x.shape().size() != 2 || x.dim(1) != weight.dim(0)) {
        throw std::invalid_argument("dense: expected [N, " + std::to_string(weight.dim(0)) + "], got " +
                                    shape_str(x.shape()));
    }
    return ad::add(ad::matmul(x, weight), bias);
}

void Dense::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".kernel", weight, true});
    out.push_back({prefix + ".bias", bias, false});
}

// ---- model -----------------------------------------------------------------

SakModel::SakModel(ArchConfig arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 init(seed);
    const std::size_t r = arch_.spatial_rank;
    const double mom = arch_.bn_momentum, eps = arch_.bn_eps;
    const Kernel k1 = kernel_for(r, 1, 1), k3 = kernel_for(r, 3, 1), k3s2 = kernel_for(r, 3, 2),
                 k5s2 = kernel_for(r, 5, 2);

    std::size_t cin = arch_.channels;
    for (auto nf : arch_.encoder_filters) {
        const std::size_t mid = std::max<std::size_t>(1, nf / 2);
        EncoderStage s;
        s.down = Conv2d(cin, nf, k3s2.kh, k3s2.kw, k3s2.sh, k3s2.sw, init);
        s.bn1 = BatchNorm(nf, mom, eps);
        s.c1 = Conv2d(nf, mid, k1.kh, k1.kw, k1.sh, k1.sw, init);
        s.bn2 = BatchNorm(mid, mom, eps);
        s.c2 = Conv2d(mid, mid, k3.kh, k3.kw, k3.sh, k3.sw, init);
        s.bn3 = BatchNorm(mid, mom, eps);
        s.c3 = Conv2d(mid, nf, k1.kh, k1.kw, k1.sh, k1.sw, init);
        enc_.push_back(std::move(s));
        cin = nf;
    }
    enc_mu_ = Dense(arch_.flatten_width(), arch_.latent_dim, init);
    enc_log_sigma_ = Dense(arch_.flatten_width(), arch_.latent_dim, init, /*zero_init=*/true);
    {
        Var b = enc_log_sigma_.bias;
        b.mutable_value() = Tensor(Shape{arch_.latent_dim}, kInitialLogSigma);
    }

    dec_in_ = Dense(arch_.latent_dim, arch_.flatten_width(), init);
    cin = arch_.encoder_filters.back();
    for (auto nf : arch_.decoder_filters()) {
        const std::size_t mid = std::max<std::size_t>(1, cin / 2);
        DecoderStage s;
        s.bn1 = BatchNorm(cin, mom, eps);
        s.d1 = Deconv2d(cin, mid, k1.kh, k1.kw, k1.sh, k1.sw, init);
        s.bn2 = BatchNorm(mid, mom, eps);
        s.d2 = Deconv2d(mid, mid, k3.kh, k3.kw, k3.sh, k3.sw, init);
        s.bn3 = BatchNorm(mid, mom, eps);
        s.d3 = Deconv2d(mid, cin, k1.kh, k1.kw, k1.sh, k1.sw, init);
        s.up = Deconv2d(cin, nf, k3s2.kh, k3s2.kw, k3s2.sh, k3s2.sw, init);
        dec_.push_back(std::move(s));
        cin = nf;
    }

    std::size_t width = arch_.aux_input_width();
    for (auto w : arch_.aux_widths) {
        aux_hidden_.emplace_back(width, w, init);
        width = w;
    }
    aux_out_ = Dense(width, arch_.aux_output_width(), init, /*zero_init=*/true);

    disc_in_ = Conv2d(arch_.disc_channels(), arch_.disc_filters[0], k5s2.kh, k5s2.kw, k5s2.sh, k5s2.sw, init);
    cin = arch_.disc_filters[0];
    for (std::size_t i = 1; i < arch_.disc_filters.size(); ++i) {
        const std::size_t nf = arch_.disc_filters[i];
        disc_.push_back({Conv2d(cin, nf, k5s2.kh, k5s2.kw, k5s2.sh, k5s2.sw, init), BatchNorm(nf, mom, eps)});
        cin = nf;
    }
    Shape dshape = arch_.padded_shape();
    for (auto& d : dshape) d >>= arch_.disc_filters.size();
    disc_out_ = Dense(cin * shape_size(dshape), 1, init);
}

LatentBatch SakModel::encode(const Var& x, const ForwardContext& ctx) const {
    check_rank4(x, arch_.channels, "encode");
    const Shape p = arch_.padded_shape();
    const std::size_t h = arch_.spatial_rank == 2 ? p[0] : 1, w = p.back();
    if (x.dim(2) != h || x.dim(3) != w) {
        throw std::invalid_argument("encode: input " + shape_str(x.shape()) + " does not match the padded extent");
    }
    Var y = x;
    for (const auto& s : enc_) {
        const Var c = s.down.forward(y);
        Var b = s.c1.forward(ad::relu(s.bn1.forward(c, ctx)));
        b = s.c2.forward(ad::relu(s.bn2.forward(b, ctx)));
        b = s.c3.forward(ad::relu(s.bn3.forward(b, ctx)));
        y = ad::add(c, b);
    }
    const Var f = flatten(ad::relu(y));
    return {enc_mu_.forward(f), enc_log_sigma_.forward(f)};
}

Var SakModel::decode(const Var& z, const ForwardContext& ctx) const {
    if (z.shape().size() != 2 || z.dim(1) != arch_.latent_dim) {
        throw std::invalid_argument("decode: expected [N, " + std::to_string(arch_.latent_dim) + "], got " +
                                    shape_str(z.shape()));
    }
    const Shape b = arch_.bottleneck_shape();
    const std::size_t h = arch_.spatial_rank == 2 ? b[0] : 1, w = b.back();
    Var y = ad::reshape(dec_in_.forward(z), Shape{z.dim(0), arch_.encoder_filters.back(), h, w});
    for (const auto& s : dec_) {
        Var r = s.d1.forward(ad::relu(s.bn1.forward(y, ctx)));
        r = s.d2.forward(ad::relu(s.bn2.forward(r, ctx)));
        r = s.d3.forward(ad::relu(s.bn3.forward(r, ctx)));
        y = s.up.forward(ad::add(y, r));
    }
    return y;
}

KoopmanBatch SakModel::aux(const LatentBatch& state, const Var* cond, const ForwardContext& ctx) const {
    if (arch_.conditioned != (cond != nullptr)) {
        throw ConfigError(arch_.conditioned ? "conditioned model requires a conditioning value"
                                            : "unconditioned model was given a conditioning value");
    }
    std::vector<Var> parts{state.mu, state.log_sigma};
    if (cond != nullptr) parts.push_back(*cond);
    Var y = ad::concat(parts, 1);
    if (y.dim(1) != arch_.aux_input_width()) {
        throw std::invalid_argument("aux: input width " + std::to_string(y.dim(1)) + ", expected " +
                                    std::to_string(arch_.aux_input_width()));
    }
    for (const auto& d : aux_hidden_) y = dropout(ad::relu(d.forward(y)), arch_.dropout_keep, ctx);
    y = aux_out_.forward(y);
    const std::size_t n = arch_.n_dec();
    return {ad::slice(y, 1, 0, n), ad::slice(y, 1, n, 2 * n)};
}

Var SakModel::discriminate(const Var& pair, const ForwardContext& ctx) const {
    check_rank4(pair, arch_.disc_channels(), "discriminate");
    Var y = ad::leaky_relu(disc_in_.forward(pair), arch_.leaky_slope);
    for (const auto& s : disc_) y = ad::leaky_relu(s.bn.forward(s.conv.forward(y), ctx), arch_.leaky_slope);
    return disc_out_.forward(flatten(y));
}

GaussianLatent SakModel::encode(const Tensor& snapshot) const {
    ad::GradModeGuard off(false);
    const Tensor batch = to_model_layout(std::span<const Tensor>(&snapshot, 1), arch_);
    const auto z = encode(Var::constant(batch), ForwardContext{});
    GaussianLatent g;
    g.mu.assign(z.mu.value().data().begin(), z.mu.value().data().end());
    g.log_sigma.assign(z.log_sigma.value().data().begin(), z.log_sigma.value().data().end());
    return g;
}

Tensor SakModel::decode(std::span<const double> z) const {
    if (z.size() != arch_.latent_dim) {
        throw std::invalid_argument("decode: latent length " + std::to_string(z.size()) + ", expected " +
                                    std::to_string(arch_.latent_dim));
    }
    ad::GradModeGuard off(false);
    const Var in = Var::constant(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end())));
    const Var out = crop_to_input(decode(in, ForwardContext{}), arch_);
    return from_model_layout(out.value(), 0, arch_);
}

KoopmanPair SakModel::aux_forward(const GaussianLatent& state, const Conditioning& cond) const {
    if (state.dim() != arch_.latent_dim || state.log_sigma.size() != arch_.latent_dim) {
        throw std::invalid_argument("aux: latent state has the wrong length");
    }
    ad::GradModeGuard off(false);
    const std::size_t m = arch_.latent_dim;
    const LatentBatch s{Var::constant(Tensor(Shape{1, m}, state.mu)),
                        Var::constant(Tensor(Shape{1, m}, state.log_sigma))};
    Var c;
    if (cond.value) c = Var::constant(Tensor(Shape{1, 1}, *cond.value));
    const auto k = aux(s, cond.value ? &c : nullptr, ForwardContext{});
    const auto& mu = k.k_mu.value().storage();
    const auto& sg = k.k_sigma.value().storage();
    return {KoopmanMatrix(arch_.koopman_form, m, mu), KoopmanMatrix(arch_.koopman_form, m, sg)};
}

double SakModel::discriminate(const Tensor& pair) const {
    ad::GradModeGuard off(false);
    Shape s{1, pair.dim(0)};
    if (arch_.spatial_rank == 1) s.push_back(1);
    for (std::size_t i = 1; i < pair.rank(); ++i) s.push_back(pair.dim(i));
    Var x = pad_to_model(Var::constant(pair.reshaped(s)), arch_);
    return discriminate(x, ForwardContext{}).value()[0];
}

std::vector<NamedParam> SakModel::generator_params() const {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
        const std::string p = "encoder." + std::to_string(i);
        enc_[i].down.collect(p + ".down", out);
        enc_[i].bn1.collect(p + ".bn1", out);
        enc_[i].c1.collect(p + ".conv1", out);
        enc_[i].bn2.collect(p + ".bn2", out);
        enc_[i].c2.collect(p + ".conv2", out);
        enc_[i].bn3.collect(p + ".bn3", out);
        enc_[i].c3.collect(p + ".conv3", out);
    }
    enc_mu_.collect("encoder.mu", out);
    enc_log_sigma_.collect("encoder.log_sigma", out);
    dec_in_.collect("decoder.dense", out);
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        const std::string p = "decoder." + std::to_string(i);
        dec_[i].bn1.collect(p + ".bn1", out);
        dec_[i].d1.collect(p + ".deconv1", out);
        dec_[i].bn2.collect(p + ".bn2", out);
        dec_[i].d2.collect(p + ".deconv2", out);
        dec_[i].bn3.collect(p + ".bn3", out);
        dec_[i].d3.collect(p + ".deconv3", out);
        dec_[i].up.collect(p + ".up", out);
    }
    for (std::size_t i = 0; i < aux_hidden_.size(); ++i) aux_hidden_[i].collect("aux." + std::to_string(i), out);
    aux_out_.collect("aux.out", out);
    return out;
}

std::vector<NamedParam> SakModel::critic_params() const {
    std::vector<NamedParam> out;
    disc_in_.collect("critic.in", out);
    for (std::size_t i = 0; i < disc_.size(); ++i) {
        const std::string p = "critic." + std::to_string(i);
        disc_[i].conv.collect(p + ".conv", out);
        disc_[i].bn.collect(p + ".bn", out);
    }
    disc_out_.collect("critic.out", out);
    return out;
}

std::vector<NamedParam> SakModel::buffers() const {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
        const std::string p = "encoder." + std::to_string(i);
        enc_[i].bn1.collect_buffers(p + ".bn1", out);
        enc_[i].bn2.collect_buffers(p + ".bn2", out);
        enc_[i].bn3.collect_buffers(p + ".bn3", out);
    }
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        const std::string p = "decoder." + std::to_string(i);
        dec_[i].bn1.collect_buffers(p + ".bn1", out);
        dec_[i].bn2.collect_buffers(p + ".bn2", out);
        dec_[i].bn3.collect_buffers(p + ".bn3", out);
    }
    for (std::size_t i = 0; i < disc_.size(); ++i) disc_[i].bn.collect_buffers("critic." + std::to_string(i) + ".bn", out);
    return out;
}

// ---- layout ----------------------------------------------------------------

Tensor to_model_layout(std::span<const Tensor> snapshots, const ArchConfig& arch) {
    const Shape p = arch.padded_shape();
    const std::size_t c = arch.channels;
    const std::size_t hp = arch.spatial_rank == 2 ? p[0] : 1, wp = p.back();
    const std::size_t h = arch.spatial_rank == 2 ? arch.input_shape[0] : 1, w = arch.input_shape.back();
    Shape expect = arch.input_shape;
    expect.push_back(c);
    Tensor out(Shape{snapshots.size(), c, hp, wp}, 0.0);
    for (std::size_t n = 0; n < snapshots.size(); ++n) {
        if (snapshots[n].shape() != expect) {
            throw std::invalid_argument("snapshot shape " + shape_str(snapshots[n].shape()) + " does not match " +
                                        shape_str(expect));
        }
        const auto src = snapshots[n].data();
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                for (std::size_t k = 0; k < c; ++k) {
                    out[((n * c + k) * hp + i) * wp + j] = src[(i * w + j) * c + k];
                }
            }
        }
    }
    return out;
}

Var crop_to_input(const Var& x, const ArchConfig& arch) {
    Var y = x;
    if (arch.spatial_rank == 2 && x.dim(2) != arch.input_shape[0]) y = ad::slice(y, 2, 0, arch.input_shape[0]);
    if (x.dim(3) != arch.input_shape.back()) y = ad::slice(y, 3, 0, arch.input_shape.back());
    return y;
}

Var pad_to_model(const Var& x, const ArchConfig& arch) {
    const Shape p = arch.padded_shape();
    Var y = x;
    if (arch.spatial_rank == 2 && x.dim(2) < p[0]) y = ad::pad_axis(y, 2, 0, p[0] - x.dim(2));
    if (x.dim(3) < p.back()) y = ad::pad_axis(y, 3, 0, p.back() - x.dim(3));
    return y;
}

Tensor from_model_layout(const Tensor& batch, std::size_t n, const ArchConfig& arch) {
    const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Shape s = arch.input_shape;
    s.push_back(c);
    Tensor out(s, 0.0);
    const auto src = batch.data();
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t k = 0; k < c; ++k) out[(i * w + j) * c + k] = src[((n * c + k) * h + i) * w + j];
        }
    }
    return out;
}

std::pair<std::size_t, std::size_t> parameter_counts(const ArchConfig& arch) {
    const std::size_t k1 = 1, k3 = arch.spatial_rank == 1 ? 3 : 9, k5 = arch.spatial_rank == 1 ? 5 : 25;
    const auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k + out; };
    const auto bn = [](std::size_t c) { return 2 * c; };
    std::size_t gen = 0;
    std::size_t cin = arch.channels;
    for (auto nf : arch.encoder_filters) {
        const std::size_t mid = std::max<std::size_t>(1, nf / 2);
        gen += conv(cin, nf, k3) + bn(nf) + conv(nf, mid, k1) + bn(mid) + conv(mid, mid, k3) + bn(mid) +
               conv(mid, nf, k1);
        cin = nf;
    }
    gen += 2 * (arch.flatten_width() * arch.latent_dim + arch.latent_dim);
    gen += arch.latent_dim * arch.flatten_width() + arch.flatten_width();
    cin = arch.encoder_filters.back();
    for (auto nf : arch.decoder_filters()) {
        const std::size_t mid = std::max<std::size_t>(1, cin / 2);
        gen += bn(cin) + conv(cin, mid, k1) + bn(mid) + conv(mid, mid, k3) + bn(mid) + conv(mid, cin, k1) +
               conv(cin, nf, k3);
        cin = nf;
    }
    std::size_t width = arch.aux_input_width();
    for (auto w : arch.aux_widths) {
        gen += width * w + w;
        width = w;
    }
    gen += width * arch.aux_output_width() + arch.aux_output_width();

    std::size_t critic = conv(arch.disc_channels(), arch.disc_filters[0], k5);
    cin = arch.disc_filters[0];
    for (std::size_t i = 1; i < arch.disc_filters.size(); ++i) {
        critic += conv(cin, arch.disc_filters[i], k5) + bn(arch.disc_filters[i]);
        cin = arch.disc_filters[i];
    }
    std::size_t cells = 1;
    for (auto d : arch.padded_shape()) cells *= d >> arch.disc_filters.size();
    critic += cin * cells + 1;
    return {gen, critic};
}

// ---- checkpoints -----------------------------------------------------------

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw DataError("checkpoint has no tensor named '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["meta"] = ckpt.meta;
    auto& table = header["tensors"];
    table = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.tensors) table.push_back({{"name", name}, {"shape", t.shape()}});
    const std::string text = header.dump();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp.string());
        out.write(kCheckpointMagic, sizeof kCheckpointMagic);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : ckpt.tensors) {
            out.write(reinterpret_cast<const char*>(t.data().data()),
                      static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
        if (!out) throw DataError("failed while writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[sizeof kCheckpointMagic];
    std::uint64_t len = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw DataError(path.string() + " is not a checkpoint file");
    }
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (std::uint64_t{1} << 32)) {
        throw DataError("checkpoint " + path.string() + " has a corrupt header");
    }
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw DataError("checkpoint " + path.string() + " is truncated in its header");
    }
    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(text);
        const int version = header.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw DataError("checkpoint version " + std::to_string(version) + " is not supported");
        }
        ck.meta = header.at("meta");
        for (const auto& e : header.at("tensors")) {
            Tensor t(e.at("shape").get<Shape>(), 0.0);
            if (!in.read(reinterpret_cast<char*>(t.data().data()),
                         static_cast<std::streamsize>(t.size() * sizeof(double)))) {
                throw DataError("checkpoint " + path.string() + " is truncated in tensor '" +
                                e.at("name").get<std::string>() + "'");
            }
            ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + " has a malformed header: " + e.what());
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw DataError("checkpoint " + path.string() + " has trailing bytes");
    }
    return ck;
}

void export_model(const SakModel& model, Checkpoint& ckpt) {
    ckpt.meta["arch"] = to_json(model.arch());
    for (const auto& p : model.generator_params()) ckpt.tensors.emplace_back(p.name, p.var.value());
    for (const auto& p : model.critic_params()) ckpt.tensors.emplace_back(p.name, p.var.value());
    for (const auto& p : model.buffers()) ckpt.tensors.emplace_back(p.name, p.var.value());
}

void import_model(SakModel& model, const Checkpoint& ckpt) {
    const auto load = [&](const std::vector<NamedParam>& params) {
        for (const auto& p : params) {
            const Tensor& t = ckpt.tensor(p.name);
            if (t.shape() != p.var.shape()) {
                throw DataError("checkpoint tensor '" + p.name + "' has shape " + shape_str(t.shape()) +
                                ", model expects " + shape_str(p.var.shape()));
            }
            Var v = p.var;
            v.mutable_value() = t;
        }
    };
    load(model.generator_params());
    load(model.critic_params());
    load(model.buffers());
}

std::uint64_t param_checksum(std::span<const NamedParam> params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params) {
        for (double v : p.var.value().data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

} // namespace sak
