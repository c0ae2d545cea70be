#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "vqd/numerics/tensor.hpp"

namespace vqd {

// The closed set of graph operations. Nodes can only be created through the
// op functions in ops.hpp, each of which tags its node with one of these.
enum class OpKind {
    leaf,
    constant,
    add,
    sub,
    mul,
    scale,
    add_scalar,
    exp,
    log,
    sqrt,
    tanh,
    abs,
    leaky_relu,
    gelu,
    max_const,
    sum,
    mean,
    l1_mean,
    mse_mean,
    reshape,
    transpose,
    slice,
    concat,
    pad_reflect,
    frame,
    avg_pool1d,
    matmul,
    linear,
    conv1d,
    conv_transpose1d,
    conv2d,
    layer_norm,
    stop_gradient,
};

std::string_view op_name(OpKind op);

template <typename T>
struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    OpKind op = OpKind::constant;
    bool requires_grad = false;

    std::vector<T>& ensure_grad() {
        if (grad.size() != value.size()) {
            grad.assign(value.size(), T(0));
        }
        return grad;
    }
};

// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value);
    static Var parameter(Tensor<T> value);

    bool valid() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    OpKind op() const { return node_->op; }
    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    Tensor<T> grad_tensor() const;
    void zero_grad() { node_->grad.clear(); }

    T item() const { return node_->value.item(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Reverse pass from a scalar. Gradients accumulate into every reachable node
// that requires grad, including persistent parameter leaves.
template <typename T>
void backward(const Var<T>& loss);

namespace detail {

template <typename T>
Var<T> make_node(OpKind op, Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

// Replays detached values during finite differencing so that the perturbed
// evaluations see the same stop_gradient outputs as the reference evaluation.
enum class DetachMode { off, record, replay };

template <typename T>
class DetachScope {
public:
    explicit DetachScope(DetachMode mode);
    ~DetachScope();
    DetachScope(const DetachScope&) = delete;
    DetachScope& operator=(const DetachScope&) = delete;

    static std::vector<Tensor<T>>& recorded();
    static void rewind();

private:
    DetachMode previous_;
};

template <typename T>
DetachMode current_detach_mode();

}  // namespace vqd
