// SPDX-License-Identifier: Apache-2.0
#include "sak/trainer.hpp"

#include "sak/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sak {

using ad::Var;

// ---- config ----------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        const auto n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_uint(key, trim(item)));
    if (out.empty()) throw ConfigError("config key '" + key + "' needs at least one value");
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define SAK_UINT(name, member)                                                                        \
    {name,                                                                                            \
     {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_uint(k, v); },   \
      [](const TrainConfig& c) { return std::to_string(c.member); }}}
#define SAK_REAL(name, member)                                                                        \
    {name,                                                                                            \
     {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
      [](const TrainConfig& c) { return num(c.member); }}}
#define SAK_BOOL(name, member)                                                                        \
    {name,                                                                                            \
     {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); },   \
      [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define SAK_LIST(name, member)                                                                        \
    {name,                                                                                            \
     {[](TrainConfig& c, const std::string& k, const std::string& v) { c.member = to_list(k, v); },   \
      [](const TrainConfig& c) { return join(c.member); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        SAK_UINT("iterations", iterations),
        SAK_REAL("lr", lr),
        SAK_UINT("n_s_initial", n_s_initial),
        SAK_UINT("n_s_max", n_s_max),
        SAK_UINT("curriculum_every", curriculum_every),
        SAK_REAL("curriculum_rate", curriculum_rate),
        SAK_UINT("batch_size", batch_size),
        SAK_UINT("seed", seed),
        SAK_UINT("checkpoint_every", checkpoint_every),
        SAK_BOOL("regenerate_koopman", regenerate_koopman),
        SAK_REAL("adam_beta1", adam_beta1),
        SAK_REAL("adam_beta2", adam_beta2),
        SAK_REAL("adam_eps", adam_eps),
        SAK_REAL("lambda_code", weights.lambda_code),
        SAK_REAL("lambda_grad", weights.lambda_grad),
        SAK_REAL("lambda_reg", weights.lambda_reg),
        SAK_REAL("lambda_gan", weights.lambda_gan),
        SAK_REAL("lambda_1", weights.lambda_1),
        SAK_REAL("lambda_2", weights.lambda_2),
        SAK_REAL("lambda_4", weights.lambda_4),
        {"grad_orders",
         {[](TrainConfig& c, const std::string& k, const std::string& v) {
              c.weights.grad_orders.clear();
              for (auto o : to_list(k, v)) c.weights.grad_orders.push_back(static_cast<int>(o));
          },
          [](const TrainConfig& c) {
              std::vector<std::size_t> o(c.weights.grad_orders.begin(), c.weights.grad_orders.end());
              return join(o);
          }}},
        SAK_REAL("mmd_c", weights.mmd_c),
        SAK_REAL("gp_weight", weights.gp_weight),
        {"gan_sign",
         {[](TrainConfig& c, const std::string&, const std::string& v) { c.weights.gan_sign = gan_sign_from_string(v); },
          [](const TrainConfig& c) { return std::string(to_string(c.weights.gan_sign)); }}},
        SAK_UINT("latent_dim", arch.latent_dim),
        {"koopman_form",
         {[](TrainConfig& c, const std::string&, const std::string& v) {
              try {
                  c.arch.koopman_form = koopman_form_from_string(v);
              } catch (const std::exception& e) {
                  throw ConfigError(e.what());
              }
          },
          [](const TrainConfig& c) { return std::string(to_string(c.arch.koopman_form)); }}},
        SAK_LIST("encoder_filters", arch.encoder_filters),
        SAK_LIST("aux_widths", arch.aux_widths),
        SAK_LIST("disc_filters", arch.disc_filters),
        SAK_REAL("dropout_keep", arch.dropout_keep),
        SAK_REAL("leaky_slope", arch.leaky_slope),
        SAK_REAL("bn_momentum", arch.bn_momentum),
        SAK_REAL("bn_eps", arch.bn_eps),
    };
    return table;
}

#undef SAK_UINT
#undef SAK_REAL
#undef SAK_BOOL
#undef SAK_LIST

} // namespace

void TrainConfig::validate() const {
    if (iterations == 0) throw ConfigError("iterations must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (n_s_initial == 0 || n_s_initial > n_s_max) throw ConfigError("need 1 <= n_s_initial <= n_s_max");
    if (curriculum_every == 0) throw ConfigError("curriculum_every must be positive");
    if (!(curriculum_rate >= 1.0)) throw ConfigError("curriculum_rate must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw ConfigError("invalid Adam moment parameters");
    }
    weights.validate();
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& [name, f] : fields()) {
        if (name == key) {
            f.set(cfg, key, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value': " + line);
        }
        set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
    return out;
}

std::size_t curriculum_update(std::size_t n_s, std::size_t iteration, const TrainConfig& cfg) {
    if (iteration == 0 || iteration % cfg.curriculum_every != 0) return n_s;
    const auto grown = static_cast<std::size_t>(std::round(cfg.curriculum_rate * static_cast<double>(n_s))) + 1;
    return std::min(grown, cfg.n_s_max);
}

// ---- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.shape(), 0.0);
        v_.emplace_back(p.shape(), 0.0);
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].mutable_value().data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        const auto g = grads[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
            w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

void Adam::export_state(const std::string& prefix, Checkpoint& ck) const {
    for (std::size_t i = 0; i < m_.size(); ++i) {
        ck.tensors.emplace_back(prefix + ".m." + std::to_string(i), m_[i]);
        ck.tensors.emplace_back(prefix + ".v." + std::to_string(i), v_[i]);
    }
}

void Adam::import_state(const std::string& prefix, const Checkpoint& ck, std::size_t t) {
    for (std::size_t i = 0; i < m_.size(); ++i) {
        const Tensor& m = ck.tensor(prefix + ".m." + std::to_string(i));
        const Tensor& v = ck.tensor(prefix + ".v." + std::to_string(i));
        if (m.shape() != m_[i].shape() || v.shape() != v_[i].shape()) {
            throw DataError("optimizer state '" + prefix + "' does not match the model");
        }
        m_[i] = m;
        v_[i] = v;
    }
    t_ = t;
}

// ---- trainer ---------------------------------------------------------------

namespace {

std::vector<Var> vars_of(const std::vector<NamedParam>& ps) {
    std::vector<Var> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.push_back(p.var);
    return out;
}

Tensor normal_tensor(const Shape& s, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t(s);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

void require_finite(const std::vector<Tensor>& grads, const std::vector<NamedParam>& params, const char* what) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].all_finite()) {
            throw NumericalError(std::string("non-finite ") + what + " gradient in " + params[i].name);
        }
    }
}

std::vector<SnapshotCorpus> prepare_corpora(std::vector<SnapshotCorpus> corpora) {
    if (corpora.empty()) throw ConfigError("training needs at least one corpus");
    for (const auto& c : corpora) c.validate();
    const bool all_norm = std::all_of(corpora.begin(), corpora.end(), [](const auto& c) { return c.normalized(); });
    if (all_norm) return corpora;
    if (std::any_of(corpora.begin(), corpora.end(), [](const auto& c) { return c.normalized(); })) {
        throw DataError("training corpora mix normalized and raw data");
    }
    const auto params = fit_normalization(corpora);
    for (auto& c : corpora) c = normalize_with(c, params);
    return corpora;
}

nlohmann::json normalization_json(const std::vector<ChannelNormalization>& n) {
    auto arr = nlohmann::json::array();
    for (const auto& c : n) arr.push_back({{"shift", c.shift}, {"scale", c.scale}, {"constant", c.constant}});
    return arr;
}

std::vector<ChannelNormalization> normalization_from_json(const nlohmann::json& j) {
    std::vector<ChannelNormalization> out;
    for (const auto& e : j) {
        out.push_back({e.at("shift").get<double>(), e.at("scale").get<double>(), e.at("constant").get<bool>()});
    }
    return out;
}

} // namespace

struct Trainer::Forward {
    Var x0, recon;           ///< [B, C, H, W] cropped
    Var targets, pred;       ///< [n*B, C, H, W] cropped, row s*B + b
    Var z_true, z_pred;      ///< [B, n, M]
};

Trainer::Trainer(TrainConfig cfg, std::vector<SnapshotCorpus> corpora) : corpora_(prepare_corpora(std::move(corpora))) {
    cfg.validate();
    state_.cfg = std::move(cfg);
    init_from_corpora();
    state_.model = std::make_unique<SakModel>(state_.cfg.arch, state_.cfg.seed);
    const auto& c = state_.cfg;
    state_.gen_opt = Adam(vars_of(state_.model->generator_params()), c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps);
    state_.critic_opt = Adam(vars_of(state_.model->critic_params()), c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps);
    state_.n_s = c.n_s_initial;
    state_.iteration = 0;
    state_.rng.seed(c.seed ^ 0x9e3779b97f4a7c15ull);
}

Trainer::Trainer(const std::filesystem::path& checkpoint, std::vector<SnapshotCorpus> corpora)
    : corpora_(std::move(corpora)) {
    const Checkpoint ck = read_checkpoint(checkpoint);
    try {
        if (ck.meta.at("kind").get<std::string>() != "sak-run") {
            throw DataError(checkpoint.string() + " is not a training checkpoint");
        }
        state_.cfg = parse_train_config(ck.meta.at("config").get<std::string>());
        state_.cfg.arch = arch_from_json(ck.meta.at("arch"));
        state_.normalization = normalization_from_json(ck.meta.at("normalization"));
        for (auto& c : corpora_) {
            c = c.normalized() ? c : normalize_with(c, state_.normalization);
        }
        check_corpora();
        state_.model = std::make_unique<SakModel>(state_.cfg.arch, state_.cfg.seed);
        import_model(*state_.model, ck);
        const auto& c = state_.cfg;
        state_.gen_opt = Adam(vars_of(state_.model->generator_params()), c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps);
        state_.critic_opt = Adam(vars_of(state_.model->critic_params()), c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps);
        state_.gen_opt.import_state("adam.gen", ck, ck.meta.at("adam_gen_steps").get<std::size_t>());
        state_.critic_opt.import_state("adam.critic", ck, ck.meta.at("adam_critic_steps").get<std::size_t>());
        state_.n_s = ck.meta.at("n_s").get<std::size_t>();
        state_.iteration = ck.meta.at("iteration").get<std::size_t>();
        std::istringstream rs(ck.meta.at("rng").get<std::string>());
        rs >> state_.rng;
        if (!rs) throw DataError("checkpoint RNG state is corrupt");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + checkpoint.string() + " is missing run metadata: " + e.what());
    }
}

void Trainer::init_from_corpora() {
    const auto& first = corpora_.front();
    auto& arch = state_.cfg.arch;
    arch.spatial_rank = first.spatial_rank;
    const Shape snap = first.snapshot_shape();
    arch.input_shape = Shape(snap.begin(), snap.end() - 1);
    arch.channels = first.channels();
    arch.conditioned = first.conditioning.has_value();
    arch.disc_sequence = state_.cfg.n_s_max;
    arch.validate();
    state_.normalization = first.normalization;
    check_corpora();
}

void Trainer::check_corpora() const {
    if (corpora_.empty()) throw ConfigError("training needs at least one corpus");
    const auto& arch = state_.cfg.arch;
    Shape expect = arch.input_shape;
    expect.push_back(arch.channels);
    for (const auto& c : corpora_) {
        if (c.snapshot_shape() != expect) {
            throw DataError("corpus snapshot shape " + shape_str(c.snapshot_shape()) + " does not match " +
                            shape_str(expect));
        }
        if (c.conditioning.has_value() != arch.conditioned) {
            throw DataError("either every training corpus carries a conditioning value or none does");
        }
        if (c.steps() < state_.cfg.n_s_max + 1) {
            throw DataError("corpus has " + std::to_string(c.steps()) + " snapshots; n_s_max " +
                            std::to_string(state_.cfg.n_s_max) + " needs at least " +
                            std::to_string(state_.cfg.n_s_max + 1));
        }
        if (c.normalization.size() != state_.normalization.size()) {
            throw DataError("training corpora do not share one normalization");
        }
        for (std::size_t k = 0; k < c.normalization.size(); ++k) {
            if (c.normalization[k].shift != state_.normalization[k].shift ||
                c.normalization[k].scale != state_.normalization[k].scale) {
                throw DataError("training corpora do not share one normalization");
            }
        }
    }
    if (corpora_.size() > 1 && !arch.conditioned) {
        throw DataError("several training corpora need conditioning values to tell them apart");
    }
}

std::vector<SequenceWindow> Trainer::sample_batch() {
    std::uniform_int_distribution<std::size_t> pick(0, corpora_.size() - 1);
    const auto& c = corpora_[pick(state_.rng)];
    std::vector<SequenceWindow> batch;
    for (std::size_t b = 0; b < state_.cfg.batch_size; ++b) batch.push_back(sample_window(c, state_.n_s, state_.rng));
    return batch;
}

Trainer::Forward Trainer::forward(const std::vector<SequenceWindow>& batch, const ForwardContext& ctx) {
    const SakModel& model = *state_.model;
    const ArchConfig& arch = model.arch();
    const std::size_t bsz = batch.size(), n = batch.front().targets.size(), m = arch.latent_dim;
    for (const auto& w : batch) {
        if (w.targets.size() != n) throw std::invalid_argument("windows in one batch differ in length");
    }
    std::vector<Tensor> snaps;
    snaps.reserve(bsz * (n + 1));
    for (const auto& w : batch) snaps.push_back(w.x0);
    for (std::size_t s = 0; s < n; ++s) {
        for (const auto& w : batch) snaps.push_back(w.targets[s]);
    }
    const Var x_all = Var::constant(to_model_layout(snaps, arch));
    const std::size_t rows = bsz * (n + 1);
    const LatentBatch enc = model.encode(x_all, ctx);
    LatentBatch state{ad::slice(enc.mu, 0, 0, bsz), ad::slice(enc.log_sigma, 0, 0, bsz)};

    Var cond;
    if (arch.conditioned) {
        Tensor c(Shape{bsz, 1});
        for (std::size_t b = 0; b < bsz; ++b) c[b] = *batch[b].conditioning;
        cond = Var::constant(c);
    }
    std::vector<Var> mus, lss;
    KoopmanBatch k;
    for (std::size_t step = 0; step < n; ++step) {
        if (step == 0 || state_.cfg.regenerate_koopman) k = model.aux(state, arch.conditioned ? &cond : nullptr, ctx);
        state = koopman_step(state, k.k_mu, k.k_sigma, arch.koopman_form);
        mus.push_back(state.mu);
        lss.push_back(state.log_sigma);
    }
    const LatentBatch pred_stats{ad::concat(mus, 0), ad::concat(lss, 0)};

    // x0 and every predicted state are decoded in one call.
    const LatentBatch dec_stats{ad::concat({ad::slice(enc.mu, 0, 0, bsz), pred_stats.mu}, 0),
                                ad::concat({ad::slice(enc.log_sigma, 0, 0, bsz), pred_stats.log_sigma}, 0)};
    const Var z_dec = sample_latent(dec_stats, normal_tensor(Shape{rows, m}, state_.rng));
    const Var decoded = crop_to_input(model.decode(z_dec, ctx), arch);
    const Var x_crop = crop_to_input(x_all, arch);

    Forward f;
    f.x0 = ad::slice(x_crop, 0, 0, bsz);
    f.recon = ad::slice(decoded, 0, 0, bsz);
    f.targets = ad::slice(x_crop, 0, bsz, rows);
    f.pred = ad::slice(decoded, 0, bsz, rows);
    const LatentBatch true_stats{ad::slice(enc.mu, 0, bsz, rows), ad::slice(enc.log_sigma, 0, bsz, rows)};
    const auto to_bnm = [&](const Var& z) { return ad::permute(ad::reshape(z, Shape{n, bsz, m}), {1, 0, 2}); };
    f.z_true = to_bnm(sample_latent(true_stats, normal_tensor(Shape{n * bsz, m}, state_.rng)));
    f.z_pred = to_bnm(sample_latent(pred_stats, normal_tensor(Shape{n * bsz, m}, state_.rng)));
    return f;
}

Var Trainer::critic_pair(const std::vector<SequenceWindow>& batch, const Var& next) const {
    const ArchConfig& arch = state_.model->arch();
    const std::size_t bsz = batch.size(), n = batch.front().targets.size(), c = arch.channels;
    const std::size_t group = arch.disc_sequence * c;
    if (n > arch.disc_sequence) throw ConfigError("sequence longer than the critic input allows");
    // X = (x_0 .. x_{n-1}) as channel groups
    std::vector<Tensor> rows;
    for (const auto& w : batch) {
        rows.push_back(w.x0);
        for (std::size_t s = 0; s + 1 < n; ++s) rows.push_back(w.targets[s]);
    }
    const Tensor x = to_model_layout(rows, arch);
    const std::size_t hw = x.size() / (bsz * n * c);
    Tensor xg(Shape{bsz, group, x.dim(2), x.dim(3)}, 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
        std::copy_n(x.data().begin() + b * n * c * hw, n * c * hw, xg.data().begin() + b * group * hw);
    }
    const Shape ns = next.shape();
    Var nx = ad::permute(ad::reshape(next, Shape{n, bsz, c, ns[2], ns[3]}), {1, 0, 2, 3, 4});
    nx = ad::reshape(nx, Shape{bsz, n * c, ns[2], ns[3]});
    if (group > n * c) nx = ad::pad_axis(nx, 1, 0, group - n * c);
    return ad::concat({Var::constant(xg), pad_to_model(nx, arch)}, 1);
}

LossReport Trainer::generator_step(const std::vector<SequenceWindow>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    const auto& cfg = state_.cfg;
    const auto& w = cfg.weights;
    SakModel& model = *state_.model;
    const auto gen_params = model.generator_params();
    ad::GradModeGuard on(true);
    const ForwardContext ctx{true, true, &state_.rng};
    const Forward f = forward(batch, ctx);
    const std::size_t n = batch.front().targets.size();

    LossParts parts;
    parts.recon = recon_loss(f.x0, f.recon);
    parts.pred = recon_loss(f.targets, f.pred);
    parts.code = n >= 2 ? mmd_code_loss(f.z_true, f.z_pred, w.mmd_constant(model.arch().latent_dim))
                        : Var::constant(Tensor::scalar(0.0));
    parts.grad = w.lambda_grad > 0.0 ? grad_loss({f.targets}, {f.pred}, model.arch().spatial_rank, w)
                                     : Var::constant(Tensor::scalar(0.0));
    parts.reg = reg_loss(gen_params);
    if (w.lambda_gan > 0.0) {
        const ForwardContext critic_ctx{true, false, nullptr};
        parts.gan = gan_generator_loss(model.discriminate(critic_pair(batch, f.pred), critic_ctx));
    } else {
        parts.gan = Var::constant(Tensor::scalar(0.0));
    }
    const Var total = total_generator_loss(parts, w);
    const auto grads = ad::grad_values(total, vars_of(gen_params));
    require_finite(grads, gen_params, "generator");
    state_.gen_opt.step(grads);

    LossReport r;
    r.step = state_.iteration + 1;
    r.n_s = n;
    r.set("recon", parts.recon.value().item());
    r.set("pred", parts.pred.value().item());
    r.set("code", parts.code.value().item());
    r.set("grad", parts.grad.value().item());
    r.set("reg", parts.reg.value().item());
    r.set("gan", parts.gan.value().item());
    r.set("total", total.value().item());
    return r;
}

LossReport Trainer::discriminator_step(const std::vector<SequenceWindow>& batch) {
    const auto& w = state_.cfg.weights;
    if (!(w.lambda_gan > 0.0)) throw ConfigError("critic step requested with lambda_gan = 0");
    SakModel& model = *state_.model;
    Var fake_next, real_next;
    {
        ad::GradModeGuard off(false);
        const ForwardContext ctx{true, false, &state_.rng};
        const Forward f = forward(batch, ctx);
        fake_next = f.pred.detach();
        real_next = f.targets.detach();
    }
    const auto critic_params = model.critic_params();
    ad::GradModeGuard on(true);
    const Var real_pair = critic_pair(batch, real_next);
    const Var fake_pair = critic_pair(batch, fake_next);
    const ForwardContext update{true, true, nullptr};
    const ForwardContext frozen{true, false, nullptr};
    const Var real_s = model.discriminate(real_pair, update);
    const Var fake_s = model.discriminate(fake_pair, frozen);
    const Var gp = gradient_penalty([&](const Var& x) { return model.discriminate(x, frozen); }, real_pair.value(),
                                    fake_pair.value(), state_.rng);
    const Var loss = discriminator_loss(fake_s, real_s, gp, w.gp_weight);
    if (!loss.value().all_finite()) throw NumericalError("non-finite critic loss");
    const auto grads = ad::grad_values(loss, vars_of(critic_params));
    require_finite(grads, critic_params, "critic");
    state_.critic_opt.step(grads);

    LossReport r;
    r.step = state_.iteration + 1;
    r.n_s = batch.front().targets.size();
    r.set("critic", loss.value().item());
    r.set("wasserstein", ad::mean(real_s).value().item() - ad::mean(fake_s).value().item());
    r.set("gp", gp.value().item());
    return r;
}

LossReport Trainer::step() {
    const auto batch = sample_batch();
    LossReport r = generator_step(batch);
    if (state_.cfg.weights.lambda_gan > 0.0) {
        for (const auto& t : discriminator_step(batch).terms) r.set(t.first, t.second);
    }
    if (!r.finite()) throw NumericalError("non-finite loss report at step " + std::to_string(r.step));
    ++state_.iteration;
    state_.n_s = curriculum_update(state_.n_s, state_.iteration, state_.cfg);
    return r;
}

void Trainer::save(const std::filesystem::path& path) const {
    Checkpoint ck;
    ck.meta["kind"] = "sak-run";
    ck.meta["config"] = format_train_config(state_.cfg);
    ck.meta["iteration"] = state_.iteration;
    ck.meta["n_s"] = state_.n_s;
    ck.meta["normalization"] = normalization_json(state_.normalization);
    ck.meta["adam_gen_steps"] = state_.gen_opt.steps();
    ck.meta["adam_critic_steps"] = state_.critic_opt.steps();
    std::ostringstream rs;
    rs << state_.rng;
    ck.meta["rng"] = rs.str();
    export_model(*state_.model, ck);
    state_.gen_opt.export_state("adam.gen", ck);
    state_.critic_opt.export_state("adam.critic", ck);
    write_checkpoint(ck, path);
}

void run_training(Trainer& trainer, const TrainOptions& opts) {
    const auto& cfg = trainer.state().cfg;
    const std::size_t until = opts.until ? opts.until : cfg.iterations;
    std::ofstream file;
    if (!opts.outdir.empty()) {
        std::filesystem::create_directories(opts.outdir);
        file.open(opts.outdir / "loss.log", trainer.state().iteration == 0 ? std::ios::trunc : std::ios::app);
        if (!file) throw DataError("cannot write " + (opts.outdir / "loss.log").string());
    }
    while (trainer.state().iteration < until) {
        const LossReport r = trainer.step();
        const std::string line = r.line();
        if (file.is_open()) file << line << '\n' << std::flush;
        if (opts.log) *opts.log << line << '\n';
        const std::size_t it = trainer.state().iteration;
        if (!opts.outdir.empty() && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < until) {
            trainer.save(opts.outdir / ("ckpt_" + std::to_string(it)));
        }
    }
    if (!opts.outdir.empty()) trainer.save(opts.outdir / "ckpt_final");
}

LoadedRun load_run(const std::filesystem::path& checkpoint) {
    const Checkpoint ck = read_checkpoint(checkpoint);
    try {
        LoadedRun run;
        run.cfg = parse_train_config(ck.meta.at("config").get<std::string>());
        run.cfg.arch = arch_from_json(ck.meta.at("arch"));
        run.normalization = normalization_from_json(ck.meta.at("normalization"));
        run.iteration = ck.meta.at("iteration").get<std::size_t>();
        run.model = std::make_unique<SakModel>(run.cfg.arch, run.cfg.seed);
        import_model(*run.model, ck);
        return run;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + checkpoint.string() + " is missing run metadata: " + e.what());
    }
}

} // namespace sak
