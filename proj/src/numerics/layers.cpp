#include "vqd/numerics/layers.hpp"

#include <stdexcept>

namespace vqd {

std::string_view layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::conv_transpose1d: return "conv_transpose1d";
        case LayerKind::linear: return "linear";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::gelu: return "gelu";
        case LayerKind::layer_norm: return "layer_norm";
        case LayerKind::depthwise_conv1d: return "depthwise_conv1d";
        case LayerKind::conv2d: return "conv2d";
    }
    return "unknown";
}

void LayerSpec::validate() const {
    const std::string k(layer_kind_name(kind));
    if (kernel < 1 || stride < 1 || dilation < 1 || kernel_w < 1 || stride_w < 1 || dilation_w < 1) {
        throw std::invalid_argument(k + ": kernel, stride and dilation must be >= 1");
    }
    if (in_channels < 1 || out_channels < 1 || groups < 1) {
        throw std::invalid_argument(k + ": channel and group counts must be >= 1");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
        throw std::invalid_argument(k + ": channels not divisible by groups");
    }
    if (kind == LayerKind::depthwise_conv1d && (groups != in_channels || out_channels != in_channels)) {
        throw std::invalid_argument("depthwise_conv1d: groups and out_channels must equal in_channels");
    }
}

LayerSpec LayerSpec::conv1d_same(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation) {
    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    s.dilation = dilation;
    s.padding = dilation * (kernel - 1) / 2;
    return s;
}

LayerSpec LayerSpec::conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::size_t groups) {
    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.groups = groups;
    return s;
}

LayerSpec LayerSpec::depthwise_conv1d(std::size_t channels, std::size_t kernel) {
    LayerSpec s = conv1d_same(channels, channels, kernel);
    s.kind = LayerKind::depthwise_conv1d;
    s.groups = channels;
    return s;
}

LayerSpec LayerSpec::conv_transpose1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
    LayerSpec s;
    s.kind = LayerKind::conv_transpose1d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::linear;
    s.in_channels = in;
    s.out_channels = out;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
    LayerSpec s;
    s.kind = LayerKind::leaky_relu;
    s.negative_slope = slope;
    s.bias = false;
    return s;
}

LayerSpec LayerSpec::gelu() {
    LayerSpec s;
    s.kind = LayerKind::gelu;
    s.bias = false;
    return s;
}

LayerSpec LayerSpec::layer_norm(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::layer_norm;
    s.in_channels = channels;
    s.out_channels = channels;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t sh,
                            std::size_t sw, std::size_t ph, std::size_t pw, std::size_t dh, std::size_t dw) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = kh;
    s.kernel_w = kw;
    s.stride = sh;
    s.stride_w = sw;
    s.padding = ph;
    s.padding_w = pw;
    s.dilation = dh;
    s.dilation_w = dw;
    return s;
}

namespace {

Shape weight_shape(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::conv1d:
        case LayerKind::depthwise_conv1d: return {s.out_channels, s.in_channels / s.groups, s.kernel};
        case LayerKind::conv_transpose1d: return {s.in_channels, s.out_channels, s.kernel};
        case LayerKind::linear: return {s.out_channels, s.in_channels};
        case LayerKind::layer_norm: return {s.in_channels};
        case LayerKind::conv2d: return {s.out_channels, s.in_channels, s.kernel, s.kernel_w};
        default: return {};
    }
}

std::size_t fan_in(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::conv1d:
        case LayerKind::depthwise_conv1d: return s.in_channels / s.groups * s.kernel;
        case LayerKind::conv_transpose1d: return s.out_channels * s.kernel;
        case LayerKind::linear: return s.in_channels;
        case LayerKind::conv2d: return s.in_channels * s.kernel * s.kernel_w;
        default: return 1;
    }
}

[[noreturn]] void shape_fail(const LayerSpec& spec, const std::string& name, const std::string& expected,
                             const Shape& got) {
    throw ShapeError("layer '" + name + "' (" + std::string(layer_kind_name(spec.kind)) + "): expected input " +
                     expected + ", got " + shape_str(got));
}

template <typename T>
void check_input(const LayerSpec& spec, const std::string& name, const Var<T>& x) {
    const Shape& s = x.shape();
    switch (spec.kind) {
        case LayerKind::conv1d:
        case LayerKind::depthwise_conv1d:
        case LayerKind::conv_transpose1d:
        case LayerKind::layer_norm:
            if (s.size() != 2 || s[0] != spec.in_channels) {
                shape_fail(spec, name, "[" + std::to_string(spec.in_channels) + ", T]", s);
            }
            break;
        case LayerKind::linear:
            if (s.size() != 2 || s[1] != spec.in_channels) {
                shape_fail(spec, name, "[N, " + std::to_string(spec.in_channels) + "]", s);
            }
            break;
        case LayerKind::conv2d:
            if (s.size() != 3 || s[0] != spec.in_channels) {
                shape_fail(spec, name, "[" + std::to_string(spec.in_channels) + ", H, W]", s);
            }
            break;
        default: break;
    }
}

template <typename T>
Var<T> dispatch(const LayerSpec& spec, const std::string& name, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    check_input(spec, name, x);
    try {
        switch (spec.kind) {
            case LayerKind::conv1d:
            case LayerKind::depthwise_conv1d:
                return conv1d(x, w, b, Conv1dParams{spec.stride, spec.padding, spec.dilation, spec.groups});
            case LayerKind::conv_transpose1d: return conv_transpose1d(x, w, b, spec.stride, spec.padding);
            case LayerKind::linear: return linear(x, w, b);
            case LayerKind::leaky_relu: return leaky_relu(x, static_cast<T>(spec.negative_slope));
            case LayerKind::gelu: return gelu(x);
            case LayerKind::layer_norm: return layer_norm(x, w, b);
            case LayerKind::conv2d:
                return conv2d(x, w, b,
                              Conv2dParams{spec.stride, spec.stride_w, spec.padding, spec.padding_w, spec.dilation,
                                           spec.dilation_w});
        }
    } catch (const ShapeError& e) {
        throw ShapeError("layer '" + name + "': " + e.what());
    }
    throw std::logic_error("unreachable layer kind");
}

}  // namespace

std::vector<std::pair<std::string, Shape>> layer_parameter_shapes(const LayerSpec& spec, const std::string& name) {
    spec.validate();
    switch (spec.kind) {
        case LayerKind::leaky_relu:
        case LayerKind::gelu: return {};
        case LayerKind::layer_norm:
            return {{name + "/gamma", weight_shape(spec)}, {name + "/beta", weight_shape(spec)}};
        default: break;
    }
    std::vector<std::pair<std::string, Shape>> out{{name + "/weight", weight_shape(spec)}};
    if (spec.bias) out.emplace_back(name + "/bias", Shape{spec.out_channels});
    return out;
}

template <typename T>
Layer<T>::Layer(LayerSpec spec, std::string name, ParamSet<T>& params, Rng& rng)
    : spec_(std::move(spec)), name_(std::move(name)) {
    spec_.validate();
    switch (spec_.kind) {
        case LayerKind::leaky_relu:
        case LayerKind::gelu: return;
        case LayerKind::layer_norm:
            weight_ = params.add(name_ + "/gamma", Tensor<T>(weight_shape(spec_), T(1)));
            bias_ = params.add(name_ + "/beta", Tensor<T>(weight_shape(spec_), T(0)));
            return;
        default: break;
    }
    const std::size_t fi = fan_in(spec_);
    weight_ = params.add(name_ + "/weight", uniform_fan_in<T>(weight_shape(spec_), fi, rng));
    if (spec_.bias) {
        bias_ = params.add(name_ + "/bias", uniform_fan_in<T>(Shape{spec_.out_channels}, fi, rng));
    }
}

template <typename T>
Var<T> Layer<T>::forward(const Var<T>& x) const {
    return dispatch(spec_, name_, x, weight_, bias_);
}

template <typename T>
Var<T> forward(const LayerSpec& spec, const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
    spec.validate();
    return dispatch(spec, std::string(layer_kind_name(spec.kind)), input, weight, bias);
}

template class Layer<float>;
template class Layer<double>;
template Var<float> forward<float>(const LayerSpec&, const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> forward<double>(const LayerSpec&, const Var<double>&, const Var<double>&, const Var<double>&);

}  // namespace vqd
