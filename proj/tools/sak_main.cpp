// SPDX-License-Identifier: Apache-2.0
//
// sak: data generation, corpus utilities, training, evaluation and sweeps.
#include "sak/corpus.hpp"
#include "sak/errors.hpp"
#include "sak/evaluate.hpp"
#include "sak/manifest.hpp"
#include "sak/solvers.hpp"
#include "sak/trainer.hpp"

#include "CLI11.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace sak;

namespace {

constexpr int kExitConfig = 2, kExitData = 3, kExitNumerical = 4;

// --outdir collision protection: an existing non-empty directory is only
// reused with --force, which clears it first.
void claim_outdir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
        for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
    fs::create_directories(dir);
}

void claim_outfile(const fs::path& file, bool force) {
    if (fs::exists(file) && !force) throw ConfigError(file.string() + " exists (use --force to overwrite)");
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::vector<std::size_t> parse_index_list(const std::string& s, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
        }
    }
    return out;
}

std::vector<double> parse_value_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("bad lambda_gan value '" + item + "'");
        }
    }
    return out;
}

std::vector<SnapshotCorpus> load_all(const std::vector<fs::path>& paths) {
    std::vector<SnapshotCorpus> out;
    for (const auto& p : paths) out.push_back(load_corpus(p));
    return out;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out || !(out << text)) throw DataError("cannot write " + p.string());
}

// Newest checkpoint in a run directory: ckpt_final, else the largest ckpt_<n>.
fs::path latest_checkpoint(const fs::path& dir) {
    if (fs::exists(dir / "ckpt_final")) return dir / "ckpt_final";
    fs::path best;
    long long best_it = -1;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("ckpt_", 0) != 0) continue;
        try {
            std::size_t used = 0;
            const long long it = std::stoll(name.substr(5), &used);
            if (used == name.size() - 5 && it > best_it) best_it = it, best = e.path();
        } catch (const std::exception&) {
        }
    }
    if (best.empty()) throw DataError("no checkpoint found in " + dir.string());
    return best;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::vector<fs::path> corpora;
    fs::path config;
    fs::path manifest;
    fs::path outdir;
    std::vector<std::string> overrides;
    bool force = false;
    bool resume = false;
    bool quiet = false;
};

void run_train(const TrainArgs& a) {
    if (a.outdir.empty()) throw ConfigError("--outdir is required");
    if (a.resume) {
        const RunManifest m = read_manifest(a.outdir / "manifest.json");
        std::vector<fs::path> paths = a.corpora;
        if (paths.empty()) {
            for (const auto& c : m.corpora) paths.emplace_back(c.path);
        }
        verify_corpora(m, paths);
        Trainer t(latest_checkpoint(a.outdir), load_all(paths));
        RunManifest updated = m;
        updated.updated = utc_timestamp();
        write_manifest(updated, a.outdir / "manifest.json");
        run_training(t, {a.outdir, a.quiet ? nullptr : &std::cout, 0});
        return;
    }
    ConfigSources sources;
    std::vector<fs::path> paths = a.corpora;
    if (!a.manifest.empty()) {
        const RunManifest m = read_manifest(a.manifest);
        sources = m.sources;
        if (paths.empty()) {
            for (const auto& c : m.corpora) paths.emplace_back(c.path);
        }
        verify_corpora(m, paths);
    } else if (!a.config.empty()) {
        sources.file_path = a.config.string();
        sources.file_text = read_text(a.config);
    }
    sources.overrides.insert(sources.overrides.end(), a.overrides.begin(), a.overrides.end());
    if (paths.empty()) throw ConfigError("train needs at least one --corpus");
    const TrainConfig cfg = effective_config(sources);
    auto corpora = load_all(paths);
    claim_outdir(a.outdir, a.force);
    write_manifest(make_manifest(cfg, sources, paths), a.outdir / "manifest.json");
    write_text(a.outdir / "config.txt", format_train_config(cfg));
    Trainer t(cfg, std::move(corpora));
    run_training(t, {a.outdir, a.quiet ? nullptr : &std::cout, 0});
}

// ---- evaluate --------------------------------------------------------------

struct EvalArgs {
    fs::path ckpt;
    fs::path corpus;
    std::size_t cycles = 1;
    std::size_t cycle_len = 64;
    std::size_t start = 0;
    std::optional<double> cond;
    std::string steps;
    fs::path outdir;
    std::size_t stochastic = 0;
    std::uint64_t seed = 0;
    bool force = false;
};

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

RolloutResult run_evaluate(const EvalArgs& a) {
    if (a.outdir.empty()) throw ConfigError("--outdir is required");
    const auto steps = parse_index_list(a.steps, "--steps");
    const LoadedRun run = load_run(a.ckpt);
    const SnapshotCorpus corpus = load_corpus(a.corpus);
    RolloutOptions opts;
    opts.cycle_len = a.cycle_len;
    opts.n_cycles = a.cycles;
    opts.start = a.start;
    opts.conditioning = a.cond;
    opts.regenerate_koopman = run.cfg.regenerate_koopman;
    claim_outdir(a.outdir, a.force);
    const RolloutResult r = rollout_cycles(*run.model, run.normalization, corpus, opts);
    write_mae_table(r, a.outdir / "mae.txt");
    save_corpus(r.predictions, a.outdir / "predictions.corpus");
    emit_figures(r, a.outdir, steps);
    std::printf("steps=%zu mean_mae=%.9g final_mae=%.9g\n", r.steps(), mean_of(r.mae_per_step), r.mae_per_step.back());
    if (a.stochastic > 0) {
        const StochasticMae s = stochastic_mae(*run.model, run.normalization, corpus, opts, a.stochastic, a.seed);
        std::ofstream out(a.outdir / "mae_stochastic.txt");
        out << "# step mae_mean mae_std (physical units, samples=" << a.stochastic << ")\n";
        char buf[96];
        for (std::size_t k = 0; k < s.mean.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu %.9g %.9g\n", k + 1, s.mean[k], s.stddev[k]);
            out << buf;
        }
        if (!out) throw DataError("cannot write mae_stochastic.txt");
        std::printf("stochastic samples=%zu mean_mae=%.9g\n", a.stochastic, mean_of(s.mean));
    }
    return r;
}

// ---- sweep -----------------------------------------------------------------

int exit_code_for(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError& x) {
        std::fprintf(stderr, "config error: %s\n", x.what());
        return kExitConfig;
    } catch (const DataError& x) {
        std::fprintf(stderr, "data error: %s\n", x.what());
        return kExitData;
    } catch (const NumericalError& x) {
        std::fprintf(stderr, "numerical error: %s\n", x.what());
        return kExitNumerical;
    } catch (const std::exception& x) {
        std::fprintf(stderr, "error: %s\n", x.what());
        return 1;
    }
}

struct SweepArgs {
    std::string values;
    TrainArgs train;
    EvalArgs eval;
    std::size_t jobs = 1;
};

int sweep_one(const SweepArgs& a, double lambda, const fs::path& dir) {
    try {
        TrainArgs t = a.train;
        t.outdir = dir / "train";
        char buf[48];
        std::snprintf(buf, sizeof buf, "lambda_gan=%.17g", lambda);
        t.overrides.emplace_back(buf);
        t.quiet = true;
        t.force = true;
        run_train(t);
        EvalArgs e = a.eval;
        e.ckpt = t.outdir / "ckpt_final";
        if (e.corpus.empty()) e.corpus = t.corpora.front();
        e.outdir = dir / "eval";
        e.force = true;
        run_evaluate(e);
        return 0;
    } catch (...) {
        return exit_code_for(std::current_exception());
    }
}

int run_sweep(const SweepArgs& a) {
    const auto values = parse_value_list(a.values);
    validate_sweep_values(values);
    if (a.train.outdir.empty()) throw ConfigError("--outdir is required");
    if (a.jobs == 0) throw ConfigError("--jobs must be positive");
    claim_outdir(a.train.outdir, a.train.force);
    std::vector<fs::path> dirs;
    for (double v : values) dirs.push_back(a.train.outdir / sweep_label(v));
    std::vector<int> codes(values.size(), 0);

    // Each run is an independent process; at most `jobs` run at once.
    std::vector<std::pair<pid_t, std::size_t>> running;
    std::fflush(nullptr);
    auto reap = [&] {
        int status = 0;
        const pid_t pid = ::wait(&status);
        for (auto it = running.begin(); it != running.end(); ++it) {
            if (it->first == pid) {
                codes[it->second] = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
                running.erase(it);
                return;
            }
        }
    };
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (running.size() >= a.jobs) reap();
        const pid_t pid = ::fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
            const int code = sweep_one(a, values[i], dirs[i]);
            std::fflush(nullptr);
            std::_Exit(code);
        }
        running.emplace_back(pid, i);
    }
    while (!running.empty()) reap();

    std::vector<Series> columns;
    int first_failure = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (codes[i] != 0) {
            std::fprintf(stderr, "%s failed with exit code %d\n", sweep_label(values[i]).c_str(), codes[i]);
            if (first_failure == 0) first_failure = codes[i];
            continue;
        }
        columns.push_back({sweep_label(values[i]), read_mae_table(dirs[i] / "eval" / "mae.txt")});
        std::printf("%s mean_mae=%.9g\n", columns.back().label.c_str(), mean_of(columns.back().values));
    }
    if (!columns.empty()) {
        write_sweep_table(columns, a.train.outdir / "sweep_mae.txt");
        write_png(line_plot(columns), a.train.outdir / "sweep_mae.png");
    }
    return first_failure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic adversarial Koopman models: data generation, training and evaluation"};
    app.require_subcommand(1);

    // datagen
    auto* datagen = app.add_subcommand("datagen", "Generate a training corpus from a reference solver");
    datagen->require_subcommand(1);
    KsConfig ks;
    fs::path ks_out;
    bool ks_force = false;
    auto* dg_ks = datagen->add_subcommand("ks", "Kuramoto-Sivashinsky corpus");
    dg_ks->add_option("--out", ks_out, "Output corpus file")->required();
    dg_ks->add_option("--nx", ks.nx, "Grid points")->capture_default_str();
    dg_ks->add_option("--length", ks.length, "Domain length")->capture_default_str();
    dg_ks->add_option("--dt", ks.dt, "Solver time step")->capture_default_str();
    dg_ks->add_option("--steps", ks.steps, "Solver steps")->capture_default_str();
    dg_ks->add_option("--save-every", ks.save_every, "Solver steps per snapshot")->capture_default_str();
    dg_ks->add_flag("--force", ks_force, "Overwrite the output file");

    FhnConfig fhn;
    fs::path fhn_out;
    bool fhn_force = false;
    auto* dg_fhn = datagen->add_subcommand("fhn", "FitzHugh-Nagumo corpus");
    dg_fhn->add_option("--out", fhn_out, "Output corpus file")->required();
    dg_fhn->add_option("--seed", fhn.seed, "Initial condition seed")->capture_default_str();
    dg_fhn->add_option("--amplitude", fhn.init_amplitude, "Initial noise amplitude")->capture_default_str();
    dg_fhn->add_option("--nx", fhn.nx, "Grid points along x")->capture_default_str();
    dg_fhn->add_option("--ny", fhn.ny, "Grid points along y")->capture_default_str();
    dg_fhn->add_option("--t-end", fhn.t_end, "Final time")->capture_default_str();
    dg_fhn->add_option("--dt", fhn.dt, "Solver time step")->capture_default_str();
    dg_fhn->add_option("--save-every", fhn.save_every, "Solver steps per snapshot")->capture_default_str();
    dg_fhn->add_flag("--force", fhn_force, "Overwrite the output file");

    // corpus
    auto* corpus = app.add_subcommand("corpus", "Corpus utilities");
    corpus->require_subcommand(1);
    fs::path conv_in, conv_out;
    std::string conv_layout, conv_names;
    double conv_dt = 1.0;
    std::optional<double> conv_cond;
    bool conv_force = false;
    auto* c_conv = corpus->add_subcommand("convert", "Convert a whitespace separated text dump");
    c_conv->add_option("--input", conv_in, "Text dump")->required()->check(CLI::ExistingFile);
    c_conv->add_option("--layout", conv_layout, "Row-major layout T,spatial...,C")->required();
    c_conv->add_option("--dt", conv_dt, "Snapshot spacing")->required();
    c_conv->add_option("--cond", conv_cond, "Conditioning value");
    c_conv->add_option("--names", conv_names, "Comma separated channel names");
    c_conv->add_option("--out", conv_out, "Output corpus file")->required();
    c_conv->add_flag("--force", conv_force, "Overwrite the output file");

    fs::path info_in;
    auto* c_info = corpus->add_subcommand("info", "Print a corpus header");
    c_info->add_option("file", info_in, "Corpus file")->required()->check(CLI::ExistingFile);

    fs::path ds_in, ds_out;
    std::size_t ds_stride = 1;
    bool ds_force = false;
    auto* c_ds = corpus->add_subcommand("downsample", "Keep every stride-th spatial point");
    c_ds->add_option("--input", ds_in, "Input corpus")->required()->check(CLI::ExistingFile);
    c_ds->add_option("--stride", ds_stride, "Spatial stride")->required();
    c_ds->add_option("--out", ds_out, "Output corpus file")->required();
    c_ds->add_flag("--force", ds_force, "Overwrite the output file");

    // train
    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--corpus", ta.corpora, "Training corpus (repeat for conditioned training)");
    train->add_option("--config", ta.config, "Flat key = value config file")->check(CLI::ExistingFile);
    train->add_option("--manifest", ta.manifest, "Rerun from a recorded manifest")->check(CLI::ExistingFile);
    train->add_option("--outdir", ta.outdir, "Run directory")->required();
    train->add_option("--set", ta.overrides, "key=value override (repeatable)");
    train->add_flag("--force", ta.force, "Overwrite a non-empty run directory");
    train->add_flag("--resume", ta.resume, "Continue from the newest checkpoint in --outdir");
    train->add_flag("--quiet", ta.quiet, "Do not echo loss lines");

    // evaluate
    EvalArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Recursive rollout of a trained model");
    evaluate->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--corpus", ea.corpus, "Ground-truth corpus")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--cycles", ea.cycles, "Number of cycles")->capture_default_str();
    evaluate->add_option("--cycle-len", ea.cycle_len, "Steps per cycle")->capture_default_str();
    evaluate->add_option("--start", ea.start, "Index of the seed snapshot")->capture_default_str();
    evaluate->add_option("--cond", ea.cond, "Conditioning value");
    evaluate->add_option("--steps", ea.steps, "Comma separated 1-based steps for 2D figures");
    evaluate->add_option("--outdir", ea.outdir, "Output directory")->required();
    evaluate->add_option("--stochastic-eval", ea.stochastic, "Also report mean and std of MAE over k samples");
    evaluate->add_option("--seed", ea.seed, "Seed for --stochastic-eval")->capture_default_str();
    evaluate->add_flag("--force", ea.force, "Overwrite a non-empty output directory");

    // sweep
    SweepArgs sa;
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate one model per lambda_gan value");
    sweep->add_option("--values", sa.values, "Comma separated lambda_gan values")->required();
    sweep->add_option("--corpus", sa.train.corpora, "Training corpus")->required();
    sweep->add_option("--config", sa.train.config, "Flat key = value config file")->check(CLI::ExistingFile);
    sweep->add_option("--set", sa.train.overrides, "key=value override (repeatable)");
    sweep->add_option("--outdir", sa.train.outdir, "Sweep directory")->required();
    sweep->add_option("--eval-corpus", sa.eval.corpus, "Evaluation corpus (default: first training corpus)");
    sweep->add_option("--cycles", sa.eval.cycles, "Evaluation cycles")->capture_default_str();
    sweep->add_option("--cycle-len", sa.eval.cycle_len, "Evaluation steps per cycle")->capture_default_str();
    sweep->add_option("--cond", sa.eval.cond, "Conditioning value for evaluation");
    sweep->add_option("--jobs", sa.jobs, "Runs executed in parallel")->capture_default_str();
    sweep->add_flag("--force", sa.train.force, "Overwrite a non-empty sweep directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*dg_ks) {
            claim_outfile(ks_out, ks_force);
            const SnapshotCorpus c = solve_ks(ks);
            save_corpus(c, ks_out);
            std::cout << describe_corpus(c);
        } else if (*dg_fhn) {
            claim_outfile(fhn_out, fhn_force);
            const SnapshotCorpus c = solve_fhn(fhn);
            save_corpus(c, fhn_out);
            std::cout << describe_corpus(c);
        } else if (*c_conv) {
            claim_outfile(conv_out, conv_force);
            const auto layout = parse_index_list(conv_layout, "--layout");
            std::vector<std::string> names;
            std::stringstream ss(conv_names);
            for (std::string n; std::getline(ss, n, ',');) names.push_back(n);
            const SnapshotCorpus c = convert_text_dump(conv_in, Shape(layout.begin(), layout.end()), conv_dt,
                                                       conv_cond, names);
            save_corpus(c, conv_out);
            std::cout << describe_corpus(c);
        } else if (*c_info) {
            std::cout << describe_corpus(load_corpus(info_in));
        } else if (*c_ds) {
            claim_outfile(ds_out, ds_force);
            const SnapshotCorpus c = downsample(load_corpus(ds_in), ds_stride);
            save_corpus(c, ds_out);
            std::cout << describe_corpus(c);
        } else if (*train) {
            run_train(ta);
        } else if (*evaluate) {
            run_evaluate(ea);
        } else if (*sweep) {
            return run_sweep(sa);
        }
    } catch (...) {
        return exit_code_for(std::current_exception());
    }
    return 0;
}
