#pragma once

#include <cmath>

#include "slpt/diffcore/params.hpp"

namespace slpt {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over every entry of the store, then zeroes the gradients.
// Every parameter must have received a gradient since the last step.
template <class T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg)
{
    for (const auto& [name, e] : store.entries())
        require(e.has_grad, "adam_step: parameter '" + name + "' has no gradient");
    for (auto& [_, e] : store.entries()) {
        e.step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad[i];
            const double m = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
            e.m[i] = static_cast<T>(m);
            e.v[i] = static_cast<T>(v);
            const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            e.value[i] = static_cast<T>(e.value[i] - update);
        }
    }
    store.zero_grad();
}

} // namespace slpt
