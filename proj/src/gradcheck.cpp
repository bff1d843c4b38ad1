#include "mscred/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mscred::ad {

GradCheckReport grad_check(const std::function<double()>& loss_value,
                           const std::function<void()>& compute_grads,
                           std::span<const std::pair<std::string, Var>> params,
                           double step, int coords_per_param, std::uint64_t seed) {
    compute_grads();
    std::vector<nd::Array> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params)
        analytic.push_back(p->has_grad() ? p->grad : nd::Array(p->value.shape()));

    GradCheckReport report;
    Rng rng(seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [name, p] = params[pi];
        const std::int64_t count = p->value.size();
        std::vector<std::int64_t> coords;
        if (coords_per_param <= 0 || count <= coords_per_param) {
            coords.resize(static_cast<std::size_t>(count));
            for (std::int64_t i = 0; i < count; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            for (int i = 0; i < coords_per_param; ++i)
                coords.push_back(static_cast<std::int64_t>(
                    rng.uniform_int(static_cast<std::uint64_t>(count))));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (std::int64_t idx : coords) {
            const double saved = p->value[idx];
            p->value[idx] = saved + step;
            const double up = loss_value();
            p->value[idx] = saved - step;
            const double down = loss_value();
            p->value[idx] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][idx];
            const double rel = std::abs(numeric - a) /
                               std::max({std::abs(numeric), std::abs(a), 1e-4});
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = idx;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace mscred::ad
