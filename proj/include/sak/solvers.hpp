// SPDX-License-Identifier: Apache-2.0
//
// Reference solvers producing training corpora.
//
//   Kuramoto-Sivashinsky   u_t + u u_x + u_xx + u_xxxx = 0, periodic on [0, L)
//   FitzHugh-Nagumo        u_t = a lap(u) + u - u^3 - v + k
//                          v_t = (b lap(v) + u - v) / tau, Neumann walls
#pragma once

#include "sak/corpus.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sak {

struct KsConfig {
    double length = 128.0;
    std::size_t nx = 1024;      ///< length / nx = 1/8
    double dt = 1.0 / 16.0;
    std::size_t steps = 4800;
    std::size_t save_every = 4; ///< corpus dt = dt * save_every = 0.25
    double blowup_limit = 1e6;

    void validate() const;
};

/// u(x, 0) = cos(x) + 0.1 cos(x/16) (1 + 2 sin(x/16))
std::vector<double> ks_initial_condition(std::span<const double> x);
std::vector<double> ks_grid(const KsConfig& cfg);

/// Advances `u` by `steps` CNAB2 steps: Crank-Nicolson on the linear terms,
/// Adams-Bashforth 2 on -u u_x (explicit Euler on the first step), spectral
/// derivatives with 2/3-rule dealiasing of the nonlinear term.
std::vector<double> ks_integrate(std::vector<double> u, const KsConfig& cfg, std::size_t steps);

/// Corpus of the states at steps 0, save_every, 2*save_every, ... (steps /
/// save_every snapshots), shape [T, nx, 1].
SnapshotCorpus solve_ks(const KsConfig& cfg);
SnapshotCorpus solve_ks(const KsConfig& cfg, std::vector<double> u0);

struct FhnConfig {
    double a = 2.8e-4;
    double b = 5e-3;
    double tau = 0.1;
    double k = -5e-3;
    std::size_t nx = 64;
    std::size_t ny = 64;
    double length = 1.0;
    double dt = 0.001;
    double t_end = 10.0;
    std::size_t save_every = 50;
    double t_start_keep = 1.0; ///< keep snapshots with t > t_start_keep
    std::uint64_t seed = 0;
    double init_amplitude = 0.1; ///< u, v ~ U[-amp, amp] per node
    double blowup_limit = 1e6;

    void validate() const;
    std::size_t total_steps() const;
};

/// Real root of u^3 = k: the homogeneous steady state u = v = u*.
double fhn_fixed_point(double k);

/// Explicit Euler integrator on a cell-centred grid (spacing length / n);
/// ghost cells mirror the boundary cells, so the normal first difference at
/// every wall is zero.
class FhnSolver {
public:
    explicit FhnSolver(FhnConfig cfg);

    /// Seeded U[-amp, amp] fields (u first, then v).
    void randomize();
    void set_state(std::vector<double> u, std::vector<double> v);
    void advance(std::size_t steps);

    const std::vector<double>& u() const noexcept { return u_; }
    const std::vector<double>& v() const noexcept { return v_; }
    std::size_t step_count() const noexcept { return steps_; }
    double time() const noexcept { return static_cast<double>(steps_) * cfg_.dt; }

    /// Field padded with its mirrored ghost layer: (ny+2) x (nx+2).
    std::vector<double> with_ghosts(const std::vector<double>& field) const;

private:
    FhnConfig cfg_;
    std::vector<double> u_, v_, lap_u_, lap_v_;
    std::size_t steps_ = 0;

    void laplacian(const std::vector<double>& f, std::vector<double>& out) const;
};

/// Corpus of shape [180, 64, 64, 2] (channels u, v) for the default config.
SnapshotCorpus solve_fhn(const FhnConfig& cfg);
SnapshotCorpus solve_fhn(FhnSolver solver, const FhnConfig& cfg);

} // namespace sak
