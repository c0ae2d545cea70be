#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vqd/numerics/ops.hpp"
#include "vqd/numerics/params.hpp"

namespace vqd {

enum class LayerKind { conv1d, conv_transpose1d, linear, leaky_relu, gelu, layer_norm, depthwise_conv1d, conv2d };

std::string_view layer_kind_name(LayerKind kind);

// Hyperparameters of one layer. conv2d uses the *_w fields for its second axis.
struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t groups = 1;
    std::size_t kernel_w = 1, stride_w = 1, padding_w = 0, dilation_w = 1;
    double negative_slope = 0.1;
    bool bias = true;

    void validate() const;

    /// Stride-1 conv with symmetric padding that preserves length (odd kernels).
    static LayerSpec conv1d_same(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation = 1);
    static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::size_t groups = 1);
    static LayerSpec depthwise_conv1d(std::size_t channels, std::size_t kernel);
    static LayerSpec conv_transpose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                      std::size_t padding);
    static LayerSpec linear(std::size_t in, std::size_t out, bool bias = true);
    static LayerSpec leaky_relu(double slope);
    static LayerSpec gelu();
    static LayerSpec layer_norm(std::size_t channels);
    static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t sh,
                            std::size_t sw, std::size_t ph, std::size_t pw, std::size_t dh = 1, std::size_t dw = 1);
};

/// Parameter names and shapes a Layer named `name` would register, without allocating.
std::vector<std::pair<std::string, Shape>> layer_parameter_shapes(const LayerSpec& spec, const std::string& name);

// A layer bound to its parameters in a ParamSet ("<name>/weight", "<name>/bias",
// or "<name>/gamma", "<name>/beta" for layer_norm).
template <typename T>
class Layer {
public:
    Layer() = default;
    Layer(LayerSpec spec, std::string name, ParamSet<T>& params, Rng& rng);

    Var<T> forward(const Var<T>& x) const;

    const LayerSpec& spec() const { return spec_; }
    const std::string& name() const { return name_; }

private:
    LayerSpec spec_;
    std::string name_;
    Var<T> weight_;
    Var<T> bias_;
};

/// Stateless evaluation of a layer with explicit parameters.
template <typename T>
Var<T> forward(const LayerSpec& spec, const Var<T>& input, const Var<T>& weight = {}, const Var<T>& bias = {});

}  // namespace vqd
