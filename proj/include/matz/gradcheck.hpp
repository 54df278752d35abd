#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "matz/params.hpp"
#include "matz/rng.hpp"

namespace matz {

/// A deterministic scalar function of a parameter set together with its
/// analytic gradient path. grad_check validates the latter against central
/// differences of the former.
struct DifferentiableScalar {
    std::function<double(const ParamSet&)> value;
    std::function<Gradients(const ParamSet&)> gradients;
};

struct GradCheckOptions {
    /// Check at most this many coordinates per parameter (0 = all),
    /// sampled deterministically from `seed`.
    std::size_t max_entries_per_param = 0;
    std::uint64_t seed = 0;
};

/// Max over checked coordinates of
///   |analytic - central_difference| / (|central_difference| + 1e-8).
inline double grad_check(const DifferentiableScalar& f, const ParamSet& params, double eps,
                         const GradCheckOptions& opts = {}) {
    require(eps > 0.0 && eps <= 1e-2, "grad_check: eps must be in (0, 1e-2]");
    const Gradients analytic = f.gradients(params);
    for (const auto& [name, p] : params) {
        auto it = analytic.find(name);
        require(it != analytic.end(), "grad_check: missing gradient for " + name);
        require(it->second.same_shape(p), "grad_check: gradient shape mismatch for " + name);
    }

    Rng rng(opts.seed);
    ParamSet probe = params;
    double worst = 0.0;
    for (auto& [name, p] : probe) {
        std::vector<std::size_t> coords(p.data.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opts.max_entries_per_param > 0 && coords.size() > opts.max_entries_per_param) {
            rng.shuffle(coords);
            coords.resize(opts.max_entries_per_param);
        }
        for (std::size_t c : coords) {
            const double saved = p.data[c];
            p.data[c] = saved + eps;
            const double up = f.value(probe);
            p.data[c] = saved - eps;
            const double down = f.value(probe);
            p.data[c] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw std::runtime_error("grad_check: non-finite loss at perturbed point of " +
                                         name);
            }
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic.at(name).data[c];
            const double rel = std::abs(a - numeric) / (std::abs(numeric) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace matz
