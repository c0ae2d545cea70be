#pragma once

#include <cstddef>
#include <vector>

#include "vqd/numerics/autodiff.hpp"

namespace vqd {

struct Conv1dParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t groups = 1;
};

struct Conv2dParams {
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_h = 0, pad_w = 0;
    std::size_t dilation_h = 1, dilation_w = 1;
};

inline std::size_t conv_out_len(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                                std::size_t dilation) {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + 2 * padding < span) {
        return 0;
    }
    return (in + 2 * padding - span) / stride + 1;
}

inline std::size_t conv_transpose_out_len(std::size_t in, std::size_t kernel, std::size_t stride,
                                          std::size_t padding) {
    return (in - 1) * stride + kernel - 2 * padding;
}

// elementwise, equal shapes
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T c);
template <typename T> Var<T> add_scalar(const Var<T>& x, T c);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);
template <typename T> Var<T> sqrt(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T negative_slope);
template <typename T> Var<T> gelu(const Var<T>& x);
/// max(x, c) elementwise; gradient passes only where x > c.
template <typename T> Var<T> max_const(const Var<T>& x, T c);
template <typename T> Var<T> stop_gradient(const Var<T>& x);

// reductions to a scalar
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> l1_mean(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mse_mean(const Var<T>& a, const Var<T>& b);

// shape manipulation
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> slice(const Var<T>& x, std::size_t dim, std::size_t start, std::size_t length);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t dim);
/// Reflect-pads the last axis. Indices fold back and forth across the signal,
/// so any pad width is accepted; a length-1 signal pads with its only value.
template <typename T> Var<T> pad_reflect(const Var<T>& x, std::size_t left, std::size_t right);
/// [T] -> [frames, window] with frames = (T - window) / hop + 1.
template <typename T> Var<T> frame(const Var<T>& x, std::size_t window, std::size_t hop);
/// [C, T] -> [C, (T - kernel) / stride + 1]
template <typename T> Var<T> avg_pool1d(const Var<T>& x, std::size_t kernel, std::size_t stride);

// dense layers
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x [N, in], weight [out, in], bias [out] (optional) -> [N, out]
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = {});
/// x [Cin, T], weight [Cout, Cin / groups, K], bias [Cout] (optional)
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv1dParams& p);
/// x [Cin, T], weight [Cin, Cout, K], bias [Cout] (optional)
template <typename T>
Var<T> conv_transpose1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
                        std::size_t padding);
/// x [Cin, H, W], weight [Cout, Cin, KH, KW], bias [Cout] (optional)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv2dParams& p);
/// Normalizes each column of x [C, T] over its C entries, then applies gamma/beta [C].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6));

}  // namespace vqd
