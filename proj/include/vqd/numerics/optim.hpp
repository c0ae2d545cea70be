#pragma once

#include <cstdint>
#include <vector>

#include "vqd/numerics/params.hpp"

namespace vqd {

// Defaults are the codec training settings: beta1 0.5, beta2 0.9,
// decoupled weight decay 1e-3, learning rate x0.98 per epoch.
struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double weight_decay = 1e-3;
    double eps = 1e-8;
    double lr_decay = 0.98;
};

template <typename T>
struct AdamWState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::int64_t step = 0;
};

/// One decoupled-weight-decay Adam update over every entry of `params`
/// (missing gradients count as zero). Returns false and leaves params and
/// state untouched when any gradient is non-finite.
template <typename T>
[[nodiscard]] bool adamw_step(ParamSet<T>& params, AdamWState<T>& state, const AdamWConfig& cfg, double lr);

}  // namespace vqd
