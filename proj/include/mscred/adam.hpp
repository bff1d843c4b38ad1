#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mscred/array.hpp"
#include "mscred/autodiff.hpp"

namespace mscred::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One parameter's Adam moments.
struct AdamSlot {
    nd::Array m;
    nd::Array v;
};

/// Bias-corrected Adam update of a single array. `step` is the 1-based
/// step count after this update.
void adam_step(nd::Array& param, const nd::Array& grad, AdamSlot& slot,
               std::int64_t step, const AdamConfig& cfg);

/// Optimizer state over a fixed parameter list.
class Adam {
public:
    Adam(std::span<const Var> params, AdamConfig cfg);

    /// Applies one update from the gradients accumulated on the parameter
    /// nodes (missing gradients count as zero), then clears them.
    void step(std::span<const Var> params);

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<AdamSlot> slots_;
    std::int64_t step_ = 0;
};

}  // namespace mscred::ad
