#include "mscred/adam.hpp"

#include <cmath>

namespace mscred::ad {

void adam_step(nd::Array& param, const nd::Array& grad, AdamSlot& slot,
               std::int64_t step, const AdamConfig& cfg) {
    if (!param.same_shape(grad)) throw ShapeError("adam_step: gradient shape mismatch");
    if (slot.m.size() == 0) {
        slot.m = nd::Array(param.shape());
        slot.v = nd::Array(param.shape());
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const std::int64_t m = param.size();
    for (std::int64_t i = 0; i < m; ++i) {
        const double g = grad[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

Adam::Adam(std::span<const Var> params, AdamConfig cfg) : cfg_(cfg) {
    slots_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        slots_[i].m = nd::Array(params[i]->value.shape());
        slots_[i].v = nd::Array(params[i]->value.shape());
    }
}

void Adam::step(std::span<const Var> params) {
    if (params.size() != slots_.size()) throw ShapeError("Adam: parameter list changed");
    ++step_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Node& p = *params[i];
        if (p.has_grad()) {
            adam_step(p.value, p.grad, slots_[i], step_, cfg_);
        } else {
            // Zero gradient still advances the moment decay.
            nd::Array zero(p.value.shape());
            adam_step(p.value, zero, slots_[i], step_, cfg_);
        }
        p.clear_grad();
    }
}

}  // namespace mscred::ad
