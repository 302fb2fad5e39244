// SPDX-License-Identifier: Apache-2.0
#include "sak/solvers.hpp"

#include "sak/errors.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <random>

namespace sak {

namespace {

// FFTW's planner is not thread-safe; execution on distinct plans is.
std::mutex g_fftw_planner;

class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n), real_(n), spec_(n / 2 + 1) {
        std::lock_guard lock(g_fftw_planner);
        auto* cplx = reinterpret_cast<fftw_complex*>(spec_.data());
        forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_.data(), cplx, FFTW_ESTIMATE);
        inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real_.data(), FFTW_ESTIMATE);
    }
    ~RealFft() {
        std::lock_guard lock(g_fftw_planner);
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    void forward(std::span<const double> x, std::vector<std::complex<double>>& out) {
        std::copy(x.begin(), x.end(), real_.begin());
        fftw_execute(forward_);
        out = spec_;
    }
    /// Normalized inverse.
    void inverse(const std::vector<std::complex<double>>& in, std::vector<double>& out) {
        spec_ = in;
        fftw_execute(inverse_);
        out.resize(n_);
        const double s = 1.0 / static_cast<double>(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * s;
    }

private:
    std::size_t n_;
    std::vector<double> real_;
    std::vector<std::complex<double>> spec_;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

double max_abs(std::span<const double> u) {
    double m = 0.0;
    for (double v : u) {
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        m = std::max(m, std::abs(v));
    }
    return m;
}

class KsStepper {
public:
    explicit KsStepper(const KsConfig& cfg) : cfg_(cfg), fft_(cfg.nx) {
        const std::size_t nk = cfg.nx / 2 + 1;
        wave_.resize(nk);
        lin_.resize(nk);
        dealias_.resize(nk);
        for (std::size_t j = 0; j < nk; ++j) {
            const double k = 2.0 * std::numbers::pi * static_cast<double>(j) / cfg.length;
            wave_[j] = k;
            lin_[j] = k * k - k * k * k * k;
            dealias_[j] = (3 * j <= cfg.nx && !(cfg.nx % 2 == 0 && j == cfg.nx / 2)) ? 1.0 : 0.0;
        }
    }

    void run(std::vector<double>& u, std::size_t steps) {
        if (steps == 0) return;
        std::vector<std::complex<double>> uh, nl;
        fft_.forward(u, uh);
        const double dt = cfg_.dt;
        for (std::size_t n = 0; n < steps; ++n) {
            nonlinear(u, nl);
            // Euler start: AB2 with N_prev = N on the first step only.
            if (nl_prev_.empty()) nl_prev_ = nl;
            for (std::size_t j = 0; j < uh.size(); ++j) {
                const double half = 0.5 * dt * lin_[j];
                uh[j] = ((1.0 + half) * uh[j] + dt * (1.5 * nl[j] - 0.5 * nl_prev_[j])) / (1.0 - half);
            }
            std::swap(nl_prev_, nl);
            fft_.inverse(uh, u);
            if (max_abs(u) > cfg_.blowup_limit) {
                throw NumericalError("Kuramoto-Sivashinsky solution blew up (max |u| > " +
                                     std::to_string(cfg_.blowup_limit) + ") at step " + std::to_string(n + 1));
            }
        }
    }

private:
    // Fourier transform of -u u_x = -(u^2)_x / 2, dealiased.
    void nonlinear(const std::vector<double>& u, std::vector<std::complex<double>>& out) {
        sq_.resize(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) sq_[i] = u[i] * u[i];
        fft_.forward(sq_, out);
        const std::complex<double> i_unit(0.0, 1.0);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] *= -0.5 * i_unit * wave_[j] * dealias_[j];
    }

    KsConfig cfg_;
    RealFft fft_;
    std::vector<double> wave_, lin_, dealias_, sq_;
    std::vector<std::complex<double>> nl_prev_;
};

} // namespace

// ---- Kuramoto-Sivashinsky ----------------------------------------------------

void KsConfig::validate() const {
    if (!(length > 0.0) || nx < 4 || nx % 2 != 0 || !(dt > 0.0) || save_every == 0 || steps < save_every) {
        throw ConfigError("invalid Kuramoto-Sivashinsky configuration");
    }
}

std::vector<double> ks_initial_condition(std::span<const double> x) {
    std::vector<double> u(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = x[i] / 16.0;
        u[i] = std::cos(x[i]) + 0.1 * std::cos(s) * (1.0 + 2.0 * std::sin(s));
    }
    return u;
}

std::vector<double> ks_grid(const KsConfig& cfg) {
    std::vector<double> x(cfg.nx);
    const double dx = cfg.length / static_cast<double>(cfg.nx);
    for (std::size_t i = 0; i < cfg.nx; ++i) x[i] = static_cast<double>(i) * dx;
    return x;
}

std::vector<double> ks_integrate(std::vector<double> u, const KsConfig& cfg, std::size_t steps) {
    cfg.validate();
    if (u.size() != cfg.nx) throw std::invalid_argument("state length does not match grid size");
    KsStepper stepper(cfg);
    stepper.run(u, steps);
    return u;
}

SnapshotCorpus solve_ks(const KsConfig& cfg) { return solve_ks(cfg, ks_initial_condition(ks_grid(cfg))); }

SnapshotCorpus solve_ks(const KsConfig& cfg, std::vector<double> u) {
    cfg.validate();
    if (u.size() != cfg.nx) throw std::invalid_argument("initial state length does not match grid size");
    const std::size_t count = cfg.steps / cfg.save_every;
    SnapshotCorpus c;
    c.shape = {count, cfg.nx, 1};
    c.spatial_rank = 1;
    c.dt = cfg.dt * static_cast<double>(cfg.save_every);
    c.channel_names = {"u"};
    c.data.reserve(count * cfg.nx);
    KsStepper stepper(cfg);
    for (std::size_t s = 0; s < count; ++s) {
        if (s > 0) stepper.run(u, cfg.save_every);
        for (double v : u) c.data.push_back(static_cast<float>(v));
    }
    return c;
}

// ---- FitzHugh-Nagumo -----------------------------------------------------------

void FhnConfig::validate() const {
    if (nx < 2 || ny < 2 || !(dt > 0.0) || !(t_end > 0.0) || save_every == 0 || !(length > 0.0) || !(tau > 0.0) ||
        a < 0.0 || b < 0.0 || init_amplitude < 0.0) {
        throw ConfigError("invalid FitzHugh-Nagumo configuration");
    }
}

std::size_t FhnConfig::total_steps() const { return static_cast<std::size_t>(std::llround(t_end / dt)); }

double fhn_fixed_point(double k) { return std::cbrt(k); }

FhnSolver::FhnSolver(FhnConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t n = cfg_.nx * cfg_.ny;
    u_.assign(n, 0.0);
    v_.assign(n, 0.0);
    lap_u_.assign(n, 0.0);
    lap_v_.assign(n, 0.0);
}

void FhnSolver::randomize() {
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_real_distribution<double> dist(-cfg_.init_amplitude, cfg_.init_amplitude);
    for (double& x : u_) x = dist(rng);
    for (double& x : v_) x = dist(rng);
    steps_ = 0;
}

void FhnSolver::set_state(std::vector<double> u, std::vector<double> v) {
    if (u.size() != u_.size() || v.size() != v_.size()) throw std::invalid_argument("FHN state size mismatch");
    u_ = std::move(u);
    v_ = std::move(v);
    steps_ = 0;
}

void FhnSolver::laplacian(const std::vector<double>& f, std::vector<double>& out) const {
    const std::size_t nx = cfg_.nx, ny = cfg_.ny;
    const double dx = cfg_.length / static_cast<double>(nx);
    const double dy = cfg_.length / static_cast<double>(ny);
    const double ix2 = 1.0 / (dx * dx), iy2 = 1.0 / (dy * dy);
    for (std::size_t i = 0; i < ny; ++i) {
        const std::size_t up = i == 0 ? 0 : i - 1;
        const std::size_t down = i + 1 == ny ? i : i + 1;
        for (std::size_t j = 0; j < nx; ++j) {
            const std::size_t left = j == 0 ? 0 : j - 1;
            const std::size_t right = j + 1 == nx ? j : j + 1;
            const double c = f[i * nx + j];
            out[i * nx + j] = (f[i * nx + left] + f[i * nx + right] - 2.0 * c) * ix2 +
                              (f[up * nx + j] + f[down * nx + j] - 2.0 * c) * iy2;
        }
    }
}

void FhnSolver::advance(std::size_t steps) {
    const double dt = cfg_.dt;
    for (std::size_t s = 0; s < steps; ++s) {
        laplacian(u_, lap_u_);
        laplacian(v_, lap_v_);
        double peak = 0.0;
        for (std::size_t i = 0; i < u_.size(); ++i) {
            const double u = u_[i], v = v_[i];
            const double du = cfg_.a * lap_u_[i] + u - u * u * u - v + cfg_.k;
            const double dv = (cfg_.b * lap_v_[i] + u - v) / cfg_.tau;
            u_[i] = u + dt * du;
            v_[i] = v + dt * dv;
            peak = std::max({peak, std::abs(u_[i]), std::abs(v_[i])});
            if (!std::isfinite(u_[i]) || !std::isfinite(v_[i])) peak = std::numeric_limits<double>::infinity();
        }
        ++steps_;
        if (peak > cfg_.blowup_limit) {
            throw NumericalError("FitzHugh-Nagumo solution blew up (max |u|,|v| > " +
                                 std::to_string(cfg_.blowup_limit) + ") at step " + std::to_string(steps_));
        }
    }
}

std::vector<double> FhnSolver::with_ghosts(const std::vector<double>& f) const {
    const std::size_t nx = cfg_.nx, ny = cfg_.ny;
    std::vector<double> g((nx + 2) * (ny + 2));
    for (std::size_t i = 0; i < ny + 2; ++i) {
        const std::size_t si = i == 0 ? 0 : (i == ny + 1 ? ny - 1 : i - 1);
        for (std::size_t j = 0; j < nx + 2; ++j) {
            const std::size_t sj = j == 0 ? 0 : (j == nx + 1 ? nx - 1 : j - 1);
            g[i * (nx + 2) + j] = f[si * nx + sj];
        }
    }
    return g;
}

SnapshotCorpus solve_fhn(const FhnConfig& cfg) {
    FhnSolver solver(cfg);
    solver.randomize();
    return solve_fhn(std::move(solver), cfg);
}

SnapshotCorpus solve_fhn(FhnSolver solver, const FhnConfig& cfg) {
    cfg.validate();
    const std::size_t total = cfg.total_steps();
    const std::size_t keep_after = static_cast<std::size_t>(std::llround(cfg.t_start_keep / cfg.dt));
    SnapshotCorpus c;
    c.spatial_rank = 2;
    c.dt = cfg.dt * static_cast<double>(cfg.save_every);
    c.channel_names = {"u", "v"};
    std::size_t count = 0;
    while (solver.step_count() < total) {
        solver.advance(cfg.save_every);
        if (solver.step_count() <= keep_after) continue;
        const auto& u = solver.u();
        const auto& v = solver.v();
        for (std::size_t i = 0; i < u.size(); ++i) {
            c.data.push_back(static_cast<float>(u[i]));
            c.data.push_back(static_cast<float>(v[i]));
        }
        ++count;
    }
    c.shape = {count, cfg.ny, cfg.nx, 2};
    return c;
}

} // namespace sak
