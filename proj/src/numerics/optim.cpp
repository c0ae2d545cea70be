#include "vqd/numerics/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vqd {

template <typename T>
bool adamw_step(ParamSet<T>& params, AdamWState<T>& state, const AdamWConfig& cfg, double lr) {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("adamw_step: learning rate must be positive");
    }
    auto& entries = params.entries();
    if (state.first_moment.empty()) {
        for (const auto& [_, v] : entries) {
            state.first_moment.emplace_back(v.size(), T(0));
            state.second_moment.emplace_back(v.size(), T(0));
        }
    }
    if (state.first_moment.size() != entries.size()) {
        throw std::invalid_argument("adamw_step: optimizer state does not match parameter set");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& v = entries[i].second;
        if (state.first_moment[i].size() != v.size()) {
            throw ShapeError("adamw_step: moment buffer for '" + entries[i].first + "' has wrong size");
        }
        if (v.has_grad()) {
            for (T g : v.grad()) {
                if (!std::isfinite(g)) {
                    return false;
                }
            }
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T decay = static_cast<T>(1.0 - lr * cfg.weight_decay);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg.eps);

    for (std::size_t i = 0; i < entries.size(); ++i) {
        Var<T>& v = entries[i].second;
        auto& p = v.mutable_value();
        auto& m = state.first_moment[i];
        auto& s = state.second_moment[i];
        const bool has_grad = v.has_grad();
        auto grad = v.grad();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const T g = has_grad ? grad[j] : T(0);
            p[j] *= decay;
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            s[j] = b2 * s[j] + (T(1) - b2) * g * g;
            if (m[j] != T(0)) {
                p[j] -= step_size * m[j] / (std::sqrt(s[j]) * inv_sqrt_bc2 + eps);
            }
        }
    }
    return true;
}

template bool adamw_step<float>(ParamSet<float>&, AdamWState<float>&, const AdamWConfig&, double);
template bool adamw_step<double>(ParamSet<double>&, AdamWState<double>&, const AdamWConfig&, double);

}  // namespace vqd
