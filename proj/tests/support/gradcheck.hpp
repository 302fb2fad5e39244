// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of reverse-mode gradients.
#pragma once

#include "sak/autodiff.hpp"
#include "sak/networks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sak::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

// |a - n| / max(|a|, |n|, floor); the floor keeps round-off on vanishing
// gradients from dominating. gradcheck scales it with the loss value, since
// the difference quotient carries noise of order eps * |L| / step.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` must be a pure function of the parameter values (fixed RNG seeds).
inline GradCheckResult gradcheck(const std::function<ad::Var()>& loss, const std::vector<NamedParam>& params,
                                 std::size_t samples, std::uint64_t seed, double step = 1e-5) {
    std::vector<ad::Var> wrt;
    std::size_t total = 0;
    for (const auto& p : params) {
        wrt.push_back(p.var);
        total += p.var.size();
    }
    std::vector<Tensor> analytic;
    double floor = 1e-6;
    {
        ad::GradModeGuard on(true);
        const ad::Var l0 = loss();
        floor *= std::max(1.0, std::abs(l0.value().item()));
        analytic = ad::grad_values(l0, wrt);
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    GradCheckResult res;
    // Recording stays on: losses that contain an inner grad() need it.
    ad::GradModeGuard on(true);
    for (std::size_t s = 0; s < samples; ++s) {
        std::size_t flat = pick(rng), which = 0;
        while (flat >= wrt[which].size()) flat -= wrt[which].size(), ++which;
        ad::Var v = wrt[which];
        double& x = v.mutable_value()[flat];
        const double saved = x;
        x = saved + step;
        const double up = loss().value().item();
        x = saved - step;
        const double down = loss().value().item();
        x = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double err = relative_error(analytic[which][flat], numeric, floor);
        ++res.checked;
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst = params[which].name + "[" + std::to_string(flat) + "] analytic " +
                        std::to_string(analytic[which][flat]) + " numeric " + std::to_string(numeric);
        }
    }
    return res;
}

} // namespace sak::testing
