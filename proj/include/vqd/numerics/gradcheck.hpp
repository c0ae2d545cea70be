#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vqd/numerics/autodiff.hpp"

namespace vqd {

struct GradCheckOptions {
    double epsilon = 1e-5;
    /// Coordinates sampled per leaf; 0 checks every coordinate.
    std::size_t max_coords_per_leaf = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string location;
    bool finite = true;
    std::size_t coordinates = 0;

    bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences (five-point stencil). `leaves` are persistent Vars the
/// function reads; they are perturbed in place and restored. stop_gradient
/// outputs are recorded on the reference evaluation and replayed on every
/// perturbed evaluation, so detached branches stay frozen. The error at a
/// coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const std::function<Var<double>()>& fn, std::vector<Var<double>> leaves,
                           const GradCheckOptions& options = {});

/// Convenience overload for named leaves; locations report the names.
GradCheckResult grad_check(const std::function<Var<double>()>& fn,
                           const std::vector<std::pair<std::string, Var<double>>>& leaves,
                           const GradCheckOptions& options = {});

}  // namespace vqd
