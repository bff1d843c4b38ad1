#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mscred/autodiff.hpp"
#include "mscred/rng.hpp"

namespace mscred::ad {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t coords_checked = 0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool passed(double tol) const { return max_rel_err < tol; }
};

/// Central finite-difference check of reverse-mode gradients.
///
/// `loss_value` must rebuild the computation from the parameters' current
/// values and return the scalar loss. Analytic gradients are taken once up
/// front; each parameter then has up to `coords_per_param` coordinates
/// perturbed by +/-step (0 checks every coordinate). Relative error uses
/// denominator max(|analytic|, |numeric|, 1e-4) so near-zero gradients are
/// compared on an absolute scale matched to the finite-difference noise of
/// losses of magnitude ~1e2.
GradCheckReport grad_check(const std::function<double()>& loss_value,
                           const std::function<void()>& compute_grads,
                           std::span<const std::pair<std::string, Var>> params,
                           double step = 1e-5, int coords_per_param = 0,
                           std::uint64_t seed = 0);

}  // namespace mscred::ad
