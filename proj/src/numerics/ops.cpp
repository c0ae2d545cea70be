#include "vqd/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace vqd {

using detail::make_node;

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <typename T>
void require_rank(const Var<T>& x, std::size_t rank, const char* op) {
    if (x.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                         shape_str(x.shape()));
    }
}

// grad buffer of input i if it participates in the reverse pass
template <typename T>
T* input_grad(Node<T>& self, std::size_t i) {
    if (i >= self.inputs.size() || !self.inputs[i] || !self.inputs[i]->requires_grad) {
        return nullptr;
    }
    return self.inputs[i]->ensure_grad().data();
}

template <typename T, typename F, typename D>
Var<T> unary(OpKind op, const Var<T>& x, F f, D dfdx) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return make_node<T>(op, std::move(out), {x}, [dfdx](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) {
            return;
        }
        const auto& xv = self.inputs[0]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
        }
    });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] + b.value()[i];
    }
    return make_node<T>(OpKind::add, std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (T* g = input_grad(self, k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] - b.value()[i];
    }
    return make_node<T>(OpKind::sub, std::move(out), {a, b}, [](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (T* g = input_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] * b.value()[i];
    }
    return make_node<T>(OpKind::mul, std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (T* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * bv[i];
            }
        }
        if (T* g = input_grad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i] * av[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
    return unary<T>(OpKind::scale, x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
    return unary<T>(OpKind::add_scalar, x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
    return unary<T>(OpKind::exp, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
    return unary<T>(OpKind::log, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
    return unary<T>(OpKind::sqrt, x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return unary<T>(OpKind::tanh, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
    return unary<T>(
        OpKind::abs, x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T negative_slope) {
    return unary<T>(
        OpKind::leaky_relu, x, [negative_slope](T v) { return v > T(0) ? v : v * negative_slope; },
        [negative_slope](T v, T) { return v > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return unary<T>(
        OpKind::gelu, x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) {
            return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        });
}

template <typename T>
Var<T> max_const(const Var<T>& x, T c) {
    return unary<T>(
        OpKind::max_const, x, [c](T v) { return v > c ? v : c; }, [c](T v, T) { return v > c ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().values()) {
        acc += v;
    }
    return make_node<T>(OpKind::sum, Tensor<T>::scalar(acc), {x}, [](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            const T up = self.grad[0];
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) {
                g[i] += up;
            }
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    if (x.size() == 0) {
        throw ShapeError("mean of empty tensor");
    }
    T acc = 0;
    for (T v : x.value().values()) {
        acc += v;
    }
    const T n = static_cast<T>(x.size());
    return make_node<T>(OpKind::mean, Tensor<T>::scalar(acc / n), {x}, [n](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            const T up = self.grad[0] / n;
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) {
                g[i] += up;
            }
        }
    });
}

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "l1_mean");
    if (a.size() == 0) {
        throw ShapeError("l1_mean of empty tensors");
    }
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += std::abs(a.value()[i] - b.value()[i]);
    }
    const T n = static_cast<T>(a.size());
    return make_node<T>(OpKind::l1_mean, Tensor<T>::scalar(acc / n), {a, b}, [n](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        const T up = self.grad[0] / n;
        T* ga = input_grad(self, 0);
        T* gb = input_grad(self, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T d = av[i] - bv[i];
            const T s = d > T(0) ? up : (d < T(0) ? -up : T(0));
            if (ga) ga[i] += s;
            if (gb) gb[i] -= s;
        }
    });
}

template <typename T>
Var<T> mse_mean(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mse_mean");
    if (a.size() == 0) {
        throw ShapeError("mse_mean of empty tensors");
    }
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    const T n = static_cast<T>(a.size());
    return make_node<T>(OpKind::mse_mean, Tensor<T>::scalar(acc / n), {a, b}, [n](Node<T>& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        const T up = T(2) * self.grad[0] / n;
        T* ga = input_grad(self, 0);
        T* gb = input_grad(self, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const T s = up * (av[i] - bv[i]);
            if (ga) ga[i] += s;
            if (gb) gb[i] -= s;
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return make_node<T>(OpKind::reshape, std::move(out), {x}, [](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
    require_rank(x, 2, "transpose");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    Tensor<T> out(Shape{cols, rows});
    const T* src = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    return make_node<T>(OpKind::transpose, std::move(out), {x}, [rows, cols](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    g[r * cols + c] += self.grad[c * rows + r];
                }
            }
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t dim, std::size_t start, std::size_t length) {
    const Shape& in = x.shape();
    if (dim >= in.size() || start + length > in[dim]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") on dim " + std::to_string(dim) + " out of bounds for " + shape_str(in));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= in[i];
    for (std::size_t i = dim + 1; i < in.size(); ++i) inner *= in[i];
    Shape os = in;
    os[dim] = length;
    Tensor<T> out(os);
    const std::size_t extent = in[dim];
    for (std::size_t o = 0; o < outer; ++o) {
        const T* src = x.value().data() + (o * extent + start) * inner;
        std::copy(src, src + length * inner, out.data() + o * length * inner);
    }
    return make_node<T>(OpKind::slice, std::move(out), {x}, [=](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t o = 0; o < outer; ++o) {
                T* dst = g + (o * extent + start) * inner;
                const T* src = self.grad.data() + o * length * inner;
                for (std::size_t i = 0; i < length * inner; ++i) {
                    dst[i] += src[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t dim) {
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    Shape os = parts[0].shape();
    if (dim >= os.size()) {
        throw ShapeError("concat: dim " + std::to_string(dim) + " out of range for " + shape_str(os));
    }
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != os.size()) {
            throw ShapeError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(os));
        }
        total += s[dim];
        s[dim] = os[dim];
        if (s != os) {
            throw ShapeError("concat: incompatible shapes " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
        }
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < dim; ++i) outer *= os[i];
    for (std::size_t i = dim + 1; i < os.size(); ++i) inner *= os[i];
    os[dim] = total;
    Tensor<T> out(os);
    std::vector<std::size_t> extents;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t e = p.shape()[dim];
        extents.push_back(e);
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = p.value().data() + o * e * inner;
            std::copy(src, src + e * inner, out.data() + (o * total + offset) * inner);
        }
        offset += e;
    }
    return make_node<T>(OpKind::concat, std::move(out), parts, [=](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            const std::size_t e = extents[k];
            if (T* g = input_grad(self, k)) {
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = self.grad.data() + (o * total + off) * inner;
                    T* dst = g + o * e * inner;
                    for (std::size_t i = 0; i < e * inner; ++i) {
                        dst[i] += src[i];
                    }
                }
            }
            off += e;
        }
    });
}

namespace {

std::size_t fold_index(std::ptrdiff_t j, std::size_t n) {
    if (n == 1) {
        return 0;
    }
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    std::ptrdiff_t m = j % period;
    if (m < 0) {
        m += period;
    }
    return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

}  // namespace

template <typename T>
Var<T> pad_reflect(const Var<T>& x, std::size_t left, std::size_t right) {
    const Shape& in = x.shape();
    if (in.empty() || in.back() == 0) {
        throw ShapeError("pad_reflect: empty signal " + shape_str(in));
    }
    const std::size_t n = in.back();
    const std::size_t rows = x.size() / n;
    const std::size_t m = n + left + right;
    std::vector<std::size_t> index(m);
    for (std::size_t j = 0; j < m; ++j) {
        index[j] = fold_index(static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(left), n);
    }
    Shape os = in;
    os.back() = m;
    Tensor<T> out(os);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < m; ++j) {
            out[r * m + j] = x.value()[r * n + index[j]];
        }
    }
    return make_node<T>(OpKind::pad_reflect, std::move(out), {x}, [=](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < m; ++j) {
                    g[r * n + index[j]] += self.grad[r * m + j];
                }
            }
        }
    });
}

template <typename T>
Var<T> frame(const Var<T>& x, std::size_t window, std::size_t hop) {
    require_rank(x, 1, "frame");
    const std::size_t n = x.shape()[0];
    if (window == 0 || hop == 0 || n < window) {
        throw ShapeError("frame: window " + std::to_string(window) + " exceeds signal length " + std::to_string(n));
    }
    const std::size_t frames = (n - window) / hop + 1;
    Tensor<T> out(Shape{frames, window});
    for (std::size_t f = 0; f < frames; ++f) {
        std::copy(x.value().data() + f * hop, x.value().data() + f * hop + window, out.data() + f * window);
    }
    return make_node<T>(OpKind::frame, std::move(out), {x}, [=](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t f = 0; f < frames; ++f) {
                for (std::size_t i = 0; i < window; ++i) {
                    g[f * hop + i] += self.grad[f * window + i];
                }
            }
        }
    });
}

template <typename T>
Var<T> avg_pool1d(const Var<T>& x, std::size_t kernel, std::size_t stride) {
    require_rank(x, 2, "avg_pool1d");
    const std::size_t c = x.shape()[0], n = x.shape()[1];
    if (kernel == 0 || stride == 0 || n < kernel) {
        throw ShapeError("avg_pool1d: kernel " + std::to_string(kernel) + " exceeds length " + std::to_string(n));
    }
    const std::size_t len = (n - kernel) / stride + 1;
    const T inv = T(1) / static_cast<T>(kernel);
    Tensor<T> out(Shape{c, len});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t t = 0; t < len; ++t) {
            T acc = 0;
            for (std::size_t k = 0; k < kernel; ++k) {
                acc += x.value()[ch * n + t * stride + k];
            }
            out[ch * len + t] = acc * inv;
        }
    }
    return make_node<T>(OpKind::avg_pool1d, std::move(out), {x}, [=](Node<T>& self) {
        if (T* g = input_grad(self, 0)) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t t = 0; t < len; ++t) {
                    const T up = self.grad[ch * len + t] * inv;
                    for (std::size_t k = 0; k < kernel; ++k) {
                        g[ch * n + t * stride + k] += up;
                    }
                }
            }
        }
    });
}

namespace {

// Output positions t in [lo, hi) for which t * stride + offset lands inside [0, n).
struct TapRange {
    std::size_t lo = 0, hi = 0;
};

TapRange tap_range(std::ptrdiff_t offset, std::size_t stride, std::size_t n, std::size_t out_len) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(n) - 1 - offset;
    if (last < 0) {
        return {};
    }
    std::ptrdiff_t hi = last / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_len));
    if (hi <= lo) {
        return {};
    }
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}


// One group of a strided, dilated, padded 2-D convolution. conv1d is the h = 1 case.
struct ConvGeom {
    std::size_t cin = 0, h = 0, w = 0;
    std::size_t kh = 1, kw = 1;
    std::size_t sh = 1, sw = 1, ph = 0, pw = 0, dh = 1, dw = 1;
    std::size_t oh = 0, ow = 0;

    std::size_t rows() const { return cin * kh * kw; }
    std::size_t positions() const { return oh * ow; }
    bool pointwise() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0; }
};

// col[(ci, a, b), (i, j)] = x[ci, i*sh + a*dh - ph, j*sw + b*dw - pw], zero outside
template <typename T>
void im2col(const T* __restrict x, const ConvGeom& g, T* __restrict col) {
    const std::size_t np = g.positions();
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* xc = x + ci * g.h * g.w;
        for (std::size_t a = 0; a < g.kh; ++a) {
            const auto offh = static_cast<std::ptrdiff_t>(a * g.dh) - static_cast<std::ptrdiff_t>(g.ph);
            const TapRange rh = tap_range(offh, g.sh, g.h, g.oh);
            for (std::size_t b = 0; b < g.kw; ++b) {
                T* row = col + ((ci * g.kh + a) * g.kw + b) * np;
                std::fill(row, row + np, T(0));
                const auto offw = static_cast<std::ptrdiff_t>(b * g.dw) - static_cast<std::ptrdiff_t>(g.pw);
                const TapRange rw = tap_range(offw, g.sw, g.w, g.ow);
                for (std::size_t i = rh.lo; i < rh.hi; ++i) {
                    const T* xrow = xc + (static_cast<std::ptrdiff_t>(i * g.sh) + offh) * static_cast<std::ptrdiff_t>(g.w);
                    T* crow = row + i * g.ow;
                    if (g.sw == 1) {
                        for (std::size_t j = rw.lo; j < rw.hi; ++j) crow[j] = xrow[static_cast<std::ptrdiff_t>(j) + offw];
                    } else {
                        for (std::size_t j = rw.lo; j < rw.hi; ++j) {
                            crow[j] = xrow[static_cast<std::ptrdiff_t>(j * g.sw) + offw];
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates col back into gx.
template <typename T>
void col2im(const T* __restrict col, const ConvGeom& g, T* __restrict gx) {
    const std::size_t np = g.positions();
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        T* gc = gx + ci * g.h * g.w;
        for (std::size_t a = 0; a < g.kh; ++a) {
            const auto offh = static_cast<std::ptrdiff_t>(a * g.dh) - static_cast<std::ptrdiff_t>(g.ph);
            const TapRange rh = tap_range(offh, g.sh, g.h, g.oh);
            for (std::size_t b = 0; b < g.kw; ++b) {
                const T* row = col + ((ci * g.kh + a) * g.kw + b) * np;
                const auto offw = static_cast<std::ptrdiff_t>(b * g.dw) - static_cast<std::ptrdiff_t>(g.pw);
                const TapRange rw = tap_range(offw, g.sw, g.w, g.ow);
                for (std::size_t i = rh.lo; i < rh.hi; ++i) {
                    T* grow = gc + (static_cast<std::ptrdiff_t>(i * g.sh) + offh) * static_cast<std::ptrdiff_t>(g.w);
                    const T* crow = row + i * g.ow;
                    for (std::size_t j = rw.lo; j < rw.hi; ++j) grow[static_cast<std::ptrdiff_t>(j * g.sw) + offw] += crow[j];
                }
            }
        }
    }
}

// c[m, n] += sum_k a[m, k] * b[k, n]
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
              T* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

// c[k, n] += sum_m a[m, k] * b[m, n]
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
                 T* __restrict c) {
    for (std::size_t p = 0; p < k; ++p) {
        T* crow = c + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T s = a[i * k + p];
            const T* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

// Fixed eight-lane order keeps the sum reproducible while letting it vectorize.
template <typename T>
T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
    T lane[8] = {};
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        for (std::size_t l = 0; l < 8; ++l) lane[l] += a[j + l] * b[j + l];
    }
    T acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
    for (; j < n; ++j) acc += a[j] * b[j];
    return acc;
}

// c[m, k] += sum_n a[m, n] * b[k, n]
template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) c[i * k + p] += dot(a + i * n, b + p * n, n);
    }
}

// Grouped convolution over [groups * g.cin, h, w] input with weights [cout, g.cin, kh, kw].
template <typename T>
void conv_forward(const T* x, const T* wt, const T* bias, const ConvGeom& g, std::size_t groups, std::size_t cout,
                  T* y) {
    const std::size_t cout_g = cout / groups, np = g.positions(), k = g.rows();
    if (bias) {
        for (std::size_t co = 0; co < cout; ++co) std::fill(y + co * np, y + (co + 1) * np, bias[co]);
    }
    std::vector<T> col(g.pointwise() ? 0 : k * np);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* xg = x + gi * g.cin * g.h * g.w;
        if (!g.pointwise()) im2col(xg, g, col.data());
        gemm_acc(cout_g, k, np, wt + gi * cout_g * k, g.pointwise() ? xg : col.data(), y + gi * cout_g * np);
    }
}

template <typename T>
void conv_backward(const T* x, const T* wt, const T* gy, const ConvGeom& g, std::size_t groups, std::size_t cout,
                   T* gx, T* gw, T* gb) {
    const std::size_t cout_g = cout / groups, np = g.positions(), k = g.rows();
    if (gb) {
        for (std::size_t co = 0; co < cout; ++co) {
            T acc = 0;
            for (std::size_t t = 0; t < np; ++t) acc += gy[co * np + t];
            gb[co] += acc;
        }
    }
    std::vector<T> col(g.pointwise() || !gw ? 0 : k * np);
    std::vector<T> gcol(g.pointwise() || !gx ? 0 : k * np);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* xg = x + gi * g.cin * g.h * g.w;
        const T* gyg = gy + gi * cout_g * np;
        const T* wg = wt + gi * cout_g * k;
        if (gw) {
            if (!g.pointwise()) im2col(xg, g, col.data());
            gemm_nt_acc(cout_g, k, np, gyg, g.pointwise() ? xg : col.data(), gw + gi * cout_g * k);
        }
        if (gx) {
            T* gxg = gx + gi * g.cin * g.h * g.w;
            if (g.pointwise()) {
                gemm_tn_acc(cout_g, k, np, wg, gyg, gxg);
            } else {
                std::fill(gcol.begin(), gcol.end(), T(0));
                gemm_tn_acc(cout_g, k, np, wg, gyg, gcol.data());
                col2im(gcol.data(), g, gxg);
            }
        }
    }
}
}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor<T> out(Shape{m, n});
    gemm_acc(m, k, n, a.value().data(), b.value().data(), out.data());
    return make_node<T>(OpKind::matmul, std::move(out), {a, b}, [=](Node<T>& self) {
        const T* gy = self.grad.data();
        if (T* ga = input_grad(self, 0)) gemm_nt_acc(m, k, n, gy, self.inputs[1]->value.data(), ga);
        if (T* gb = input_grad(self, 1)) gemm_tn_acc(m, k, n, self.inputs[0]->value.data(), gy, gb);
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    const std::size_t rows = x.shape()[0], in = x.shape()[1], outf = weight.shape()[0];
    if (weight.shape()[1] != in) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{outf}) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(outf) +
                         " outputs");
    }
    Tensor<T> out(Shape{rows, outf});
    const T* xv = x.value().data();
    const T* wv = weight.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < outf; ++o) {
            T acc = has_bias ? bias.value()[o] : T(0);
            const T* wr = wv + o * in;
            const T* xr = xv + r * in;
            for (std::size_t i = 0; i < in; ++i) {
                acc += wr[i] * xr[i];
            }
            out[r * outf + o] = acc;
        }
    }
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_node<T>(OpKind::linear, std::move(out), std::move(inputs), [=](Node<T>& self) {
        const T* xv = self.inputs[0]->value.data();
        const T* wv = self.inputs[1]->value.data();
        const T* gy = self.grad.data();
        T* gx = input_grad(self, 0);
        T* gw = input_grad(self, 1);
        T* gb = has_bias ? input_grad(self, 2) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < outf; ++o) {
                const T up = gy[r * outf + o];
                if (gx) {
                    const T* wr = wv + o * in;
                    T* xr = gx + r * in;
                    for (std::size_t i = 0; i < in; ++i) xr[i] += up * wr[i];
                }
                if (gw) {
                    T* wr = gw + o * in;
                    const T* xr = xv + r * in;
                    for (std::size_t i = 0; i < in; ++i) wr[i] += up * xr[i];
                }
                if (gb) gb[o] += up;
            }
        }
    });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv1dParams& p) {
    require_rank(x, 2, "conv1d");
    require_rank(weight, 3, "conv1d");
    const std::size_t cin = x.shape()[0], n = x.shape()[1];
    const std::size_t cout = weight.shape()[0], cin_g = weight.shape()[1], kernel = weight.shape()[2];
    if (p.groups == 0 || cin % p.groups != 0 || cout % p.groups != 0 || cin / p.groups != cin_g) {
        throw ShapeError("conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and groups " + std::to_string(p.groups));
    }
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{cout}) {
        throw ShapeError("conv1d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
                         " output channels");
    }
    const std::size_t out_len = conv_out_len(n, kernel, p.stride, p.padding, p.dilation);
    if (out_len == 0) {
        throw ShapeError("conv1d: input " + shape_str(x.shape()) + " too short for kernel " + std::to_string(kernel));
    }
    ConvGeom g;
    g.cin = cin_g;
    g.h = 1;
    g.w = n;
    g.kw = kernel;
    g.sw = p.stride;
    g.pw = p.padding;
    g.dw = p.dilation;
    g.oh = 1;
    g.ow = out_len;
    const std::size_t groups = p.groups;
    Tensor<T> out(Shape{cout, out_len});
    conv_forward(x.value().data(), weight.value().data(), has_bias ? bias.value().data() : nullptr, g, groups, cout,
                 out.data());
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_node<T>(OpKind::conv1d, std::move(out), std::move(inputs), [=](Node<T>& self) {
        conv_backward(self.inputs[0]->value.data(), self.inputs[1]->value.data(), self.grad.data(), g, groups, cout,
                      input_grad(self, 0), input_grad(self, 1), has_bias ? input_grad(self, 2) : nullptr);
    });
}

template <typename T>
Var<T> conv_transpose1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
                        std::size_t padding) {
    require_rank(x, 2, "conv_transpose1d");
    require_rank(weight, 3, "conv_transpose1d");
    const std::size_t cin = x.shape()[0], n = x.shape()[1];
    const std::size_t cout = weight.shape()[1], kernel = weight.shape()[2];
    if (weight.shape()[0] != cin || stride == 0 || n == 0) {
        throw ShapeError("conv_transpose1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    if ((n - 1) * stride + kernel <= 2 * padding) {
        throw ShapeError("conv_transpose1d: padding " + std::to_string(padding) + " consumes whole output");
    }
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{cout}) {
        throw ShapeError("conv_transpose1d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
    }
    const std::size_t out_len = conv_transpose_out_len(n, kernel, stride, padding);
    Tensor<T> out(Shape{cout, out_len});
    if (has_bias) {
        for (std::size_t co = 0; co < cout; ++co) {
            std::fill(out.data() + co * out_len, out.data() + (co + 1) * out_len, bias.value()[co]);
        }
    }
    const T* xv = x.value().data();
    const T* wv = weight.value().data();
    // input positions t whose tap t * stride + off lands in [0, out_len)
    auto in_range = [=](std::ptrdiff_t off) { return tap_range(off, stride, out_len, n); };
    for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xr = xv + ci * n;
        for (std::size_t co = 0; co < cout; ++co) {
            T* y = out.data() + co * out_len;
            for (std::size_t k = 0; k < kernel; ++k) {
                const T w = wv[(ci * cout + co) * kernel + k];
                const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(padding);
                const TapRange r = in_range(off);
                for (std::size_t t = r.lo; t < r.hi; ++t) {
                    y[static_cast<std::ptrdiff_t>(t * stride) + off] += w * xr[t];
                }
            }
        }
    }
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_node<T>(OpKind::conv_transpose1d, std::move(out), std::move(inputs), [=](Node<T>& self) {
        const T* xv = self.inputs[0]->value.data();
        const T* wv = self.inputs[1]->value.data();
        T* gx = input_grad(self, 0);
        T* gw = input_grad(self, 1);
        T* gb = has_bias ? input_grad(self, 2) : nullptr;
        if (gb) {
            for (std::size_t co = 0; co < cout; ++co) {
                T acc = 0;
                for (std::size_t t = 0; t < out_len; ++t) acc += self.grad[co * out_len + t];
                gb[co] += acc;
            }
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xr = xv + ci * n;
            for (std::size_t co = 0; co < cout; ++co) {
                const T* gy = self.grad.data() + co * out_len;
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::size_t wi = (ci * cout + co) * kernel + k;
                    const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(padding);
                    const TapRange r = in_range(off);
                    if (gx) {
                        T* gxr = gx + ci * n;
                        const T w = wv[wi];
                        for (std::size_t t = r.lo; t < r.hi; ++t) {
                            gxr[t] += w * gy[static_cast<std::ptrdiff_t>(t * stride) + off];
                        }
                    }
                    if (gw) {
                        T acc = 0;
                        for (std::size_t t = r.lo; t < r.hi; ++t) {
                            acc += xr[t] * gy[static_cast<std::ptrdiff_t>(t * stride) + off];
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv2dParams& p) {
    require_rank(x, 3, "conv2d");
    require_rank(weight, 4, "conv2d");
    const std::size_t cin = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::size_t cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
    if (weight.shape()[1] != cin) {
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{cout}) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
                         " output channels");
    }
    const std::size_t oh = conv_out_len(h, kh, p.stride_h, p.pad_h, p.dilation_h);
    const std::size_t ow = conv_out_len(w, kw, p.stride_w, p.pad_w, p.dilation_w);
    if (oh == 0 || ow == 0) {
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " too small for kernel " + shape_str({kh, kw}));
    }
    const ConvGeom g{cin, h, w, kh, kw, p.stride_h, p.stride_w, p.pad_h, p.pad_w, p.dilation_h, p.dilation_w, oh, ow};
    Tensor<T> out(Shape{cout, oh, ow});
    conv_forward(x.value().data(), weight.value().data(), has_bias ? bias.value().data() : nullptr, g,
                 std::size_t{1}, cout, out.data());
    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_node<T>(OpKind::conv2d, std::move(out), std::move(inputs), [=](Node<T>& self) {
        conv_backward(self.inputs[0]->value.data(), self.inputs[1]->value.data(), self.grad.data(), g,
                      std::size_t{1}, cout, input_grad(self, 0), input_grad(self, 1),
                      has_bias ? input_grad(self, 2) : nullptr);
    });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    require_rank(x, 2, "layer_norm");
    const std::size_t c = x.shape()[0], n = x.shape()[1];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match input " + shape_str(x.shape()));
    }
    std::vector<T> xhat(c * n), inv_std(n);
    Tensor<T> out(Shape{c, n});
    const T* xv = x.value().data();
    for (std::size_t t = 0; t < n; ++t) {
        T mu = 0;
        for (std::size_t ch = 0; ch < c; ++ch) mu += xv[ch * n + t];
        mu /= static_cast<T>(c);
        T var = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T d = xv[ch * n + t] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[t] = is;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T xh = (xv[ch * n + t] - mu) * is;
            xhat[ch * n + t] = xh;
            out[ch * n + t] = gamma.value()[ch] * xh + beta.value()[ch];
        }
    }
    return make_node<T>(OpKind::layer_norm, std::move(out), {x, gamma, beta},
                        [c, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const T* gv = self.inputs[1]->value.data();
        T* gx = input_grad(self, 0);
        T* gg = input_grad(self, 1);
        T* gbeta = input_grad(self, 2);
        const T* gy = self.grad.data();
        for (std::size_t t = 0; t < n; ++t) {
            T sum_d = 0, sum_dx = 0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t i = ch * n + t;
                const T d = gy[i] * gv[ch];
                sum_d += d;
                sum_dx += d * xhat[i];
                if (gg) gg[ch] += gy[i] * xhat[i];
                if (gbeta) gbeta[ch] += gy[i];
            }
            if (gx) {
                const T inv_c = T(1) / static_cast<T>(c);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t i = ch * n + t;
                    const T d = gy[i] * gv[ch];
                    gx[i] += inv_std[t] * (d - inv_c * sum_d - xhat[i] * inv_c * sum_dx);
                }
            }
        }
    });
}

#define VQD_INSTANTIATE(T)                                                                                   \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> scale<T>(const Var<T>&, T);                                                              \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                                         \
    template Var<T> exp<T>(const Var<T>&);                                                                   \
    template Var<T> log<T>(const Var<T>&);                                                                   \
    template Var<T> sqrt<T>(const Var<T>&);                                                                  \
    template Var<T> tanh<T>(const Var<T>&);                                                                  \
    template Var<T> abs<T>(const Var<T>&);                                                                   \
    template Var<T> leaky_relu<T>(const Var<T>&, T);                                                         \
    template Var<T> gelu<T>(const Var<T>&);                                                                  \
    template Var<T> max_const<T>(const Var<T>&, T);                                                          \
    template Var<T> sum<T>(const Var<T>&);                                                                   \
    template Var<T> mean<T>(const Var<T>&);                                                                  \
    template Var<T> l1_mean<T>(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mse_mean<T>(const Var<T>&, const Var<T>&);                                               \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                        \
    template Var<T> transpose<T>(const Var<T>&);                                                             \
    template Var<T> slice<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);                          \
    template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                                      \
    template Var<T> pad_reflect<T>(const Var<T>&, std::size_t, std::size_t);                                 \
    template Var<T> frame<T>(const Var<T>&, std::size_t, std::size_t);                                       \
    template Var<T> avg_pool1d<T>(const Var<T>&, std::size_t, std::size_t);                                  \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
    template Var<T> conv1d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Conv1dParams&);             \
    template Var<T> conv_transpose1d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Conv2dParams&);             \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);

VQD_INSTANTIATE(float)
VQD_INSTANTIATE(double)

#undef VQD_INSTANTIATE

}  // namespace vqd
