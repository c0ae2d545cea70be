#pragma once

#include <random>

#include "vqd/numerics/ops.hpp"
#include "vqd/numerics/params.hpp"

namespace vqd::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

// Scalar probe: sum(x * R) for a fixed random R, so every output coordinate
// carries a distinct, O(1) weight in the gradient.
template <typename T = double>
Var<T> project(const Var<T>& x, const Tensor<T>& weights) {
    return sum(mul(x, Var<T>::constant(weights)));
}

}  // namespace vqd::testing
