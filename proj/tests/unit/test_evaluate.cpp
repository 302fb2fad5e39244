// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "sak/errors.hpp"
#include "sak/evaluate.hpp"
#include "sak/manifest.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace sak;

namespace {

ArchConfig tiny_arch(std::size_t width = 32) {
    ArchConfig a;
    a.latent_dim = 4;
    a.input_shape = {width};
    a.encoder_filters = {4, 4, 8, 8, 8};
    a.aux_widths = {8, 8};
    a.disc_filters = {4, 4};
    return a;
}

SnapshotCorpus wave(std::size_t t_count, std::size_t width = 32, double amp = 3.0) {
    SnapshotCorpus c;
    c.shape = {t_count, width, 1};
    c.dt = 0.25;
    c.channel_names = {"u"};
    for (std::size_t t = 0; t < t_count; ++t) {
        for (std::size_t x = 0; x < width; ++x) {
            const double ph = 2.0 * M_PI * static_cast<double>(x) / static_cast<double>(width) - 0.3 * t;
            c.data.push_back(static_cast<float>(amp * std::sin(ph) + 1.0));
        }
    }
    return c;
}

std::vector<ChannelNormalization> norm_of(const SnapshotCorpus& c) {
    return fit_normalization(std::span<const SnapshotCorpus>(&c, 1));
}

// Random-weight AUX head so that rollouts actually move.
void perturb_aux(SakModel& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.05);
    ad::Var w = m.aux_head().weight;
    for (auto& v : w.mutable_value().data()) v = n(rng);
}

} // namespace

TEST_CASE("untrained model reproduces the autoencode-and-hold baseline exactly") {
    const SakModel m(tiny_arch(), 3);
    const SnapshotCorpus c = wave(40);
    RolloutOptions o;
    o.cycle_len = 8;
    o.n_cycles = 3;
    o.start = 2;
    const auto n = norm_of(c);
    const RolloutResult r = rollout_cycles(m, n, c, o);
    const RolloutResult b = autoencode_hold_baseline(m, n, c, o);
    CHECK(r.predictions.data == b.predictions.data);
    CHECK(r.mae_per_step == b.mae_per_step);
    CHECK(r.steps() == 24);
    // within a cycle the frozen latent repeats the same snapshot
    const std::size_t per = c.snapshot_size();
    for (std::size_t k = 1; k < 8; ++k) {
        CHECK(std::equal(r.predictions.data.begin() + k * per, r.predictions.data.begin() + (k + 1) * per,
                         r.predictions.data.begin()));
    }
}

TEST_CASE("rollouts are deterministic and MAE matches an elementwise oracle") {
    SakModel m(tiny_arch(), 4);
    perturb_aux(m, 9);
    const SnapshotCorpus c = wave(40);
    const auto n = norm_of(c);
    RolloutOptions o;
    o.cycle_len = 5;
    o.n_cycles = 4;
    const RolloutResult a = rollout_cycles(m, n, c, o);
    const RolloutResult b = rollout_cycles(m, n, c, o);
    CHECK(a.predictions.data == b.predictions.data);
    CHECK(a.mae_per_step == b.mae_per_step);
    REQUIRE(a.steps() == o.cycle_len * o.n_cycles);
    CHECK(a.predictions.shape == Shape{20, 32, 1});
    CHECK(a.ground_truth.shape == Shape{20, 32, 1});
    for (std::size_t k = 0; k < a.steps(); ++k) {
        double s = 0.0;
        for (std::size_t x = 0; x < 32; ++x) {
            s += std::fabs(static_cast<double>(a.predictions.data[k * 32 + x]) - c.data[(k + 1) * 32 + x]);
        }
        CHECK(a.mae_per_step[k] >= 0.0);
        CHECK(a.mae_per_step[k] == doctest::Approx(s / 32.0).epsilon(1e-12));
    }
    CHECK(mae_curve(a) == a.mae_per_step);
    // the moving latent differs from the frozen baseline
    CHECK(a.predictions.data != autoencode_hold_baseline(m, n, c, o).predictions.data);
}

TEST_CASE("hand-off conversion round trips") {
    const std::vector<ChannelNormalization> n{{1.5, 2.75, false}, {-3.0, 0.125, false}};
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(Shape{16, 2});
    for (auto& v : t.data()) v = u(rng);
    const auto phys = to_physical_units(t, n);
    CHECK(phys[0] == doctest::Approx(t[0] * 2.75 + 1.5));
    CHECK(phys[1] == doctest::Approx(t[1] * 0.125 - 3.0));
    const Tensor back = to_model_units(phys, t.shape(), n);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::fabs(back[i] - t[i]) <= 1e-5 * std::max(1.0, std::fabs(t[i])));
}

TEST_CASE("MAE curve examples") {
    const SnapshotCorpus c = wave(10);
    CHECK(mae_per_snapshot(c, c) == std::vector<double>(10, 0.0));
    SnapshotCorpus shifted = c;
    for (auto& v : shifted.data) v -= 0.5f;
    for (double v : mae_per_snapshot(c, shifted)) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));

    SnapshotCorpus still = wave(10);
    for (std::size_t i = 0; i < still.data.size(); ++i) still.data[i] = still.data[i % 32];
    const RolloutResult h = hold_initial_baseline(still, 6, 1);
    CHECK(h.mae_per_step == std::vector<double>(6, 0.0));
    CHECK_THROWS_AS(hold_initial_baseline(still, 10, 0), DataError);
}

TEST_CASE("rollout preconditions") {
    const SakModel m(tiny_arch(), 3);
    const SnapshotCorpus c = wave(10);
    const auto n = norm_of(c);
    RolloutOptions o;
    o.cycle_len = 5;
    o.n_cycles = 2;
    CHECK_THROWS_AS(rollout_cycles(m, n, c, o), DataError);
    o.n_cycles = 0;
    CHECK_THROWS_AS(rollout_cycles(m, n, c, o), ConfigError);
    o.n_cycles = 1;
    CHECK_THROWS_AS(rollout_cycles(m, n, wave(10, 64), o), DataError);

    ArchConfig ca = tiny_arch();
    ca.conditioned = true;
    const SakModel cm(ca, 3);
    CHECK_THROWS_AS(rollout_cycles(cm, n, c, o), ConfigError);
    o.conditioning = 0.5;
    CHECK(rollout_cycles(cm, n, c, o).steps() == 5);
}

TEST_CASE("long-horizon cycle protocols") {
    ArchConfig a = tiny_arch(1024);
    a.encoder_filters = {2, 2, 2, 2, 2};
    const SakModel m(a, 1);
    const SnapshotCorpus c = wave(1153, 1024);
    RolloutOptions o;
    o.cycle_len = 64;
    o.n_cycles = 18;
    const RolloutResult r = rollout_cycles(m, norm_of(c), c, o);
    CHECK(r.steps() == 1152);
    CHECK(static_cast<double>(r.steps()) * c.dt == 288.0);
    CHECK(r.n_cycles * r.cycle_len == 1152);
    o.cycle_len = 32;
    o.n_cycles = 10;
    CHECK(rollout_cycles(m, norm_of(c), c, o).steps() == 320);
}

TEST_CASE("stochastic evaluation reports a spread") {
    SakModel m(tiny_arch(), 4);
    const SnapshotCorpus c = wave(20);
    const auto n = norm_of(c);
    RolloutOptions o;
    o.cycle_len = 4;
    const StochasticMae s = stochastic_mae(m, n, c, o, 5, 11);
    const StochasticMae s2 = stochastic_mae(m, n, c, o, 5, 11);
    CHECK(s.mean == s2.mean);
    CHECK(s.mean.size() == 4);
    bool spread = false;
    for (double v : s.stddev) {
        CHECK(v >= 0.0);
        spread = spread || v > 0.0;
    }
    CHECK(spread);
    CHECK_THROWS_AS(stochastic_mae(m, n, c, o, 0, 1), ConfigError);
}

TEST_CASE("figures have the field extents") {
    const auto dir = std::filesystem::temp_directory_path() / "sak_eval_figures";
    std::filesystem::remove_all(dir);
    const SakModel m(tiny_arch(), 3);
    const SnapshotCorpus c = wave(30);
    RolloutOptions o;
    o.cycle_len = 12;
    o.n_cycles = 2;
    const RolloutResult r = rollout_cycles(m, norm_of(c), c, o);
    const auto files = emit_figures(r, dir);
    REQUIRE(files.size() == 2);
    const Image st = read_png(dir / "spacetime.png");
    CHECK(st.width == 24);
    CHECK(st.height == 3 * 32 + 2 * 8);
    CHECK(std::filesystem::exists(dir / "mae.png"));

    write_mae_table(r, dir / "mae.txt");
    std::ifstream in(dir / "mae.txt");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("physical units") != std::string::npos);
    const auto back = read_mae_table(dir / "mae.txt");
    REQUIRE(back.size() == r.steps());
    for (std::size_t k = 0; k < back.size(); ++k) CHECK(back[k] == doctest::Approx(r.mae_per_step[k]).epsilon(1e-8));
    std::filesystem::remove_all(dir);
}

TEST_CASE("2D figures are written per step and channel") {
    const auto dir = std::filesystem::temp_directory_path() / "sak_eval_figures_2d";
    std::filesystem::remove_all(dir);
    RolloutResult r;
    SnapshotCorpus c;
    c.shape = {3, 4, 5, 2};
    c.spatial_rank = 2;
    c.channel_names = {"u", "v"};
    for (std::size_t i = 0; i < 3 * 4 * 5 * 2; ++i) c.data.push_back(static_cast<float>(i % 7));
    r.predictions = c;
    r.ground_truth = c;
    r.ground_truth.data[0] += 1.0f;
    r.mae_per_step = mae_per_snapshot(r.predictions, r.ground_truth);
    r.cycle_len = 3;
    r.n_cycles = 1;
    CHECK(emit_figures(r, dir, {}).size() == 1);
    std::filesystem::remove_all(dir);
    const auto files = emit_figures(r, dir, {1, 3});
    CHECK(files.size() == 5);
    const Image img = read_png(dir / "step1_u.png");
    CHECK(img.width == 3 * 5 + 2 * 8);
    CHECK(img.height == 4);
    // error panel: zero difference maps to the neutral centre colour
    const std::size_t x = 2 * (5 + 8) + 1, y = 1;
    CHECK(img.rgb[(y * img.width + x) * 3] == 221);
    CHECK(std::filesystem::exists(dir / "step3_v.png"));
    CHECK_THROWS_AS(emit_figures(r, dir, {4}), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("sweep values and tables") {
    CHECK_NOTHROW(validate_sweep_values({0.0}));
    CHECK_NOTHROW(validate_sweep_values({0.0, 0.01, 0.1, 0.25, 1.0}));
    CHECK_THROWS_AS(validate_sweep_values({}), ConfigError);
    CHECK_THROWS_AS(validate_sweep_values({0.1, 0.1}), ConfigError);
    CHECK_THROWS_AS(validate_sweep_values({-0.1}), ConfigError);
    CHECK(sweep_label(0.01) == "lambda_gan=0.01");
    const auto path = std::filesystem::temp_directory_path() / "sak_sweep_table.txt";
    write_sweep_table({{sweep_label(0), {1.0, 2.0}}, {sweep_label(0.5), {3.0, 4.0}}}, path);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header.find("lambda_gan=0 lambda_gan=0.5") != std::string::npos);
    CHECK(row == "1 1 3");
    std::filesystem::remove(path);
}

TEST_CASE("manifest digests detect modified corpora") {
    const auto dir = std::filesystem::temp_directory_path() / "sak_manifest";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto file = dir / "c.corpus";
    save_corpus(wave(12), file);
    // SHA-256 of "abc"
    {
        std::ofstream(dir / "abc") << "abc";
    }
    CHECK(sha256_file(dir / "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

    ConfigSources src;
    src.file_text = "lr = 2e-4\n";
    src.overrides = {"seed=7"};
    const TrainConfig cfg = effective_config(src);
    CHECK(cfg.lr == 2e-4);
    CHECK(cfg.seed == 7);
    src.overrides.push_back("lr=3e-4");
    CHECK(effective_config(src).lr == 3e-4);
    CHECK_THROWS_AS(effective_config({"", "", {"lr"}}), ConfigError);

    RunManifest a = make_manifest(cfg, src, {file});
    RunManifest b = make_manifest(cfg, src, {file});
    a.created = b.created = a.updated = b.updated = "";
    CHECK(a.to_json() == b.to_json());
    write_manifest(a, dir / "manifest.json");
    const RunManifest back = read_manifest(dir / "manifest.json");
    CHECK(back.to_json() == a.to_json());
    CHECK(back.seed == 7);
    CHECK_NOTHROW(verify_corpora(back, {file}));
    CHECK_THROWS_AS(verify_corpora(back, {}), DataError);

    SnapshotCorpus changed = wave(12);
    changed.data[5] += 1.0f;
    save_corpus(changed, file);
    CHECK_THROWS_AS(verify_corpora(back, {file}), DataError);
    std::filesystem::remove_all(dir);
}
