#include "vqd/numerics/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vqd {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

template class Tensor<float>;
template class Tensor<double>;

std::string_view op_name(OpKind op) {
    switch (op) {
        case OpKind::leaf: return "leaf";
        case OpKind::constant: return "constant";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::add_scalar: return "add_scalar";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sqrt: return "sqrt";
        case OpKind::tanh: return "tanh";
        case OpKind::abs: return "abs";
        case OpKind::leaky_relu: return "leaky_relu";
        case OpKind::gelu: return "gelu";
        case OpKind::max_const: return "max_const";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::l1_mean: return "l1_mean";
        case OpKind::mse_mean: return "mse_mean";
        case OpKind::reshape: return "reshape";
        case OpKind::transpose: return "transpose";
        case OpKind::slice: return "slice";
        case OpKind::concat: return "concat";
        case OpKind::pad_reflect: return "pad_reflect";
        case OpKind::frame: return "frame";
        case OpKind::avg_pool1d: return "avg_pool1d";
        case OpKind::matmul: return "matmul";
        case OpKind::linear: return "linear";
        case OpKind::conv1d: return "conv1d";
        case OpKind::conv_transpose1d: return "conv_transpose1d";
        case OpKind::conv2d: return "conv2d";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::stop_gradient: return "stop_gradient";
    }
    return "unknown";
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = OpKind::constant;
    return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = OpKind::leaf;
    node->requires_grad = true;
    return Var(std::move(node));
}

template <typename T>
Tensor<T> Var<T>::grad_tensor() const {
    if (!has_grad()) {
        return Tensor<T>(shape());
    }
    return Tensor<T>(shape(), node_->grad);
}

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.valid() || loss.size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
    }
    if (!loss.requires_grad()) {
        return;
    }

    // iterative post-order DFS; graphs from deep decoders overflow recursion
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& node = **it;
        if (node.backward && !node.grad.empty()) {
            node.backward(node);
        }
    }
}

namespace detail {

template <typename T>
Var<T> make_node(OpKind op, Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    for (const auto& in : inputs) {
        if (in.valid() && in.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) {
            node->inputs.push_back(in.node());
        }
        node->backward = std::move(backward_fn);
    }
    return Var<T>(std::move(node));
}

template <typename T>
struct DetachState {
    DetachMode mode = DetachMode::off;
    std::vector<Tensor<T>> values;
    std::size_t cursor = 0;
};

template <typename T>
DetachState<T>& detach_state() {
    thread_local DetachState<T> state;
    return state;
}

}  // namespace detail

template <typename T>
DetachScope<T>::DetachScope(DetachMode mode) : previous_(detail::detach_state<T>().mode) {
    auto& st = detail::detach_state<T>();
    st.mode = mode;
    st.cursor = 0;
    if (mode == DetachMode::record) {
        st.values.clear();
    }
}

template <typename T>
DetachScope<T>::~DetachScope() {
    detail::detach_state<T>().mode = previous_;
}

template <typename T>
std::vector<Tensor<T>>& DetachScope<T>::recorded() {
    return detail::detach_state<T>().values;
}

template <typename T>
void DetachScope<T>::rewind() {
    detail::detach_state<T>().cursor = 0;
}

template <typename T>
DetachMode current_detach_mode() {
    return detail::detach_state<T>().mode;
}

// stop_gradient lives here because it is the only op touching the replay state.
template <typename T>
Var<T> stop_gradient(const Var<T>& x) {
    auto& st = detail::detach_state<T>();
    Tensor<T> value = x.value();
    if (st.mode == DetachMode::record) {
        st.values.push_back(value);
    } else if (st.mode == DetachMode::replay) {
        if (st.cursor >= st.values.size() || st.values[st.cursor].shape() != value.shape()) {
            throw std::logic_error("stop_gradient replay diverged from the recorded evaluation");
        }
        value = st.values[st.cursor++];
    }
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = OpKind::stop_gradient;
    return Var<T>(std::move(node));
}

#define VQD_INSTANTIATE(T)                                                                                    \
    template class Var<T>;                                                                                    \
    template void backward<T>(const Var<T>&);                                                                 \
    template Var<T> detail::make_node<T>(OpKind, Tensor<T>, std::vector<Var<T>>, std::function<void(Node<T>&)>); \
    template class DetachScope<T>;                                                                            \
    template DetachMode current_detach_mode<T>();                                                             \
    template Var<T> stop_gradient<T>(const Var<T>&);

VQD_INSTANTIATE(float)
VQD_INSTANTIATE(double)

#undef VQD_INSTANTIATE

}  // namespace vqd
