#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/helpers.hpp"
#include "vqd/numerics/checkpoint.hpp"
#include "vqd/numerics/gradcheck.hpp"
#include "vqd/numerics/layers.hpp"
#include "vqd/numerics/optim.hpp"

using namespace vqd;
using vqd::testing::project;
using vqd::testing::random_tensor;

namespace {

using D = Var<double>;

std::vector<double> to_vec(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

// Runs grad_check on one layer with random input and parameters; returns the error.
GradCheckResult check_layer(const LayerSpec& spec, Shape in_shape, std::uint64_t seed) {
    Rng rng(seed);
    ParamSet<double> params;
    Layer<double> layer(spec, "l", params, rng);
    // perturb biases/gammas away from their init so every term is exercised
    for (auto& [_, v] : params.entries()) {
        for (auto& x : v.mutable_value().values()) x += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    D x = D::parameter(random_tensor(in_shape, rng));
    const Shape out_shape = layer.forward(x).shape();
    const Tensor<double> r = random_tensor(out_shape, rng);
    std::vector<std::pair<std::string, D>> leaves{{"input", x}};
    for (const auto& [n, v] : params.entries()) leaves.emplace_back(n, v);
    return grad_check([&] { return project(layer.forward(x), r); }, leaves);
}

}  // namespace

TEST_CASE("conv1d with identity kernel returns its input") {
    LayerSpec spec = LayerSpec::conv1d(1, 1, 3, 1, 1);
    auto w = Var<float>::constant(Tensor<float>({1, 1, 3}, {0.f, 1.f, 0.f}));
    auto b = Var<float>::constant(Tensor<float>({1}, {0.f}));
    auto x = Var<float>::constant(Tensor<float>({1, 4}, {1, 2, 3, 4}));
    auto y = forward(spec, x, w, b);
    CHECK(y.shape() == Shape{1, 4});
    CHECK(to_vec(y.value()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("linear with zero weights outputs its bias") {
    LayerSpec spec = LayerSpec::linear(3, 2);
    auto w = Var<float>::constant(Tensor<float>({2, 3}, 0.f));
    auto b = Var<float>::constant(Tensor<float>({2}, {0.5f, -1.5f}));
    auto x = Var<float>::constant(Tensor<float>({4, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
    auto y = forward(spec, x, w, b);
    REQUIRE(y.shape() == Shape{4, 2});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(y.value().at2(i, 0) == 0.5f);
        CHECK(y.value().at2(i, 1) == -1.5f);
    }
}

TEST_CASE("transposed conv of stride 2 with a ones kernel") {
    LayerSpec spec = LayerSpec::conv_transpose1d(1, 1, 2, 2, 0);
    auto w = Var<float>::constant(Tensor<float>({1, 1, 2}, 1.f));
    auto x = Var<float>::constant(Tensor<float>({1, 2}, {1, 1}));
    auto y = forward(spec, x, w, Var<float>{});
    CHECK(to_vec(y.value()) == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("shape mismatch names the layer and both shapes") {
    Rng rng(1);
    ParamSet<float> params;
    Layer<float> layer(LayerSpec::conv1d_same(3, 4, 5), "encoder/stem", params, rng);
    auto x = Var<float>::constant(Tensor<float>({2, 10}));
    try {
        (void)layer.forward(x);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("encoder/stem") != std::string::npos);
        CHECK(msg.find("[2, 10]") != std::string::npos);
        CHECK(msg.find("[3, T]") != std::string::npos);
    }
}

TEST_CASE("invalid layer hyperparameters are rejected") {
    LayerSpec spec = LayerSpec::conv1d(1, 1, 3, 1, 0);
    spec.kernel = 0;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = LayerSpec::conv1d(1, 1, 3, 0, 0);
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = LayerSpec::linear(0, 2);
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("backward of sum of squares") {
    auto x = Var<double>::parameter(Tensor<double>::vector({1.0, -2.0}));
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == -4.0);
}

TEST_CASE("stop_gradient blocks the edge exactly") {
    auto x = Var<double>::parameter(Tensor<double>::vector({0.3, 1.7, -2.0}));
    auto y = stop_gradient(mul(x, x));
    auto loss = add(sum(y), scale(sum(stop_gradient(x)), 3.0));
    backward(loss);
    for (double g : x.grad()) CHECK(g == 0.0);

    auto z = Var<double>::parameter(Tensor<double>::vector({2.0}));
    backward(add(sum(mul(z, stop_gradient(z))), sum(z)));
    CHECK(z.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("gradients accumulate across repeated uses of a node") {
    auto x = Var<double>::parameter(Tensor<double>::vector({1.5}));
    auto y = add(x, add(x, x));
    backward(sum(mul(y, y)));
    // d/dx (3x)^2 = 18x
    CHECK(x.grad()[0] == doctest::Approx(27.0));
}

TEST_CASE("grad_check on a quadratic form is exact to 1e-9") {
    Rng rng(7);
    const Tensor<double> a = random_tensor({4, 4}, rng);
    D x = D::parameter(random_tensor({4, 1}, rng));
    D am = D::constant(a);
    auto fn = [&] { return sum(mul(x, matmul(am, x))); };
    // the five-point stencil is exact on quadratics, so a wide step only trims roundoff
    auto r = grad_check(fn, {x}, GradCheckOptions{.epsilon = 1e-2});
    INFO(r.location << " err " << r.max_rel_error);
    CHECK(r.passed(1e-9));
}

TEST_CASE("grad_check holds detached branches frozen") {
    D x = D::parameter(Tensor<double>::vector({0.4, -1.1, 2.3}));
    auto fn = [&] {
        D frozen = stop_gradient(exp(x));
        return add(sum(mul(x, frozen)), mse_mean(x, stop_gradient(scale(x, 0.5))));
    };
    auto r = grad_check(fn, {x});
    CHECK(r.finite);
    CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("grad_check reports non-finite values with a location") {
    D x = D::parameter(Tensor<double>::vector({-1.0}));
    auto r = grad_check([&] { return sum(log(x)); }, {x});
    CHECK_FALSE(r.finite);
    CHECK_FALSE(r.location.empty());
}

TEST_CASE("elementwise and reduction ops pass grad_check") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::uniform_int_distribution<std::size_t> ext(1, 5);
        const Shape s{ext(rng), ext(rng)};
        D a = D::parameter(random_tensor(s, rng));
        D b = D::parameter(random_tensor(s, rng, 0.5, 2.0));
        const Tensor<double> r = random_tensor(s, rng);
        auto fn = [&] {
            D e = add(mul(tanh(a), log(b)), sub(exp(scale(a, 0.5)), sqrt(b)));
            D f = add(abs(add_scalar(a, 3.0)), max_const(a, -2.0));
            return add(add(project(e, r), project(f, r)), add(mean(mul(a, b)), l1_mean(b, add_scalar(b, 0.25))));
        };
        auto res = grad_check(fn, {a, b});
        INFO("seed " << seed << " at " << res.location);
        REQUIRE(res.passed(1e-5));
    }
}

TEST_CASE("shape ops pass grad_check") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::uniform_int_distribution<std::size_t> ext(2, 6);
        const std::size_t rows = ext(rng), cols = ext(rng) + 6;
        D x = D::parameter(random_tensor({rows, cols}, rng));
        D v = D::parameter(random_tensor({cols * 2}, rng));
        auto fn = [&] {
            D t = transpose(x);
            D part = slice(x, 1, 1, cols - 2);
            D cat = concat<double>({part, x}, 1);
            D padded = pad_reflect(x, 3, 4);
            D frames = frame(v, 4, 3);
            D pooled = avg_pool1d(x, 2, 2);
            D flat = reshape(x, {rows * cols});
            Rng prng(seed + 1000);
            return add(add(add(project(t, random_tensor(t.shape(), prng)), project(cat, random_tensor(cat.shape(), prng))),
                           add(project(padded, random_tensor(padded.shape(), prng)),
                               project(frames, random_tensor(frames.shape(), prng)))),
                       add(project(pooled, random_tensor(pooled.shape(), prng)),
                           project(flat, random_tensor(flat.shape(), prng))));
        };
        auto res = grad_check(fn, {x, v});
        INFO("seed " << seed << " at " << res.location);
        REQUIRE(res.passed(1e-5));
    }
}

TEST_CASE("every layer passes grad_check on 100 random shapes") {
    std::uniform_int_distribution<std::size_t> small(1, 4);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed * 7919 + 3);
        const std::size_t cin = small(rng), cout = small(rng), len = 6 + small(rng) * 2;
        const std::size_t kernel = small(rng) + 1, stride = small(rng) % 3 + 1, dil = small(rng) % 2 + 1;
        const std::size_t pad = small(rng) % 3;

        struct Case {
            LayerSpec spec;
            Shape shape;
        };
        std::vector<Case> cases{
            {LayerSpec::conv1d(cin, cout, kernel, stride, pad), {cin, len}},
            {LayerSpec::conv1d_same(cin, cout, 2 * (kernel / 2) + 1, dil), {cin, len}},
            {LayerSpec::conv1d(2 * cin, 2 * cout, kernel, 1, pad, 2), {2 * cin, len}},
            {LayerSpec::depthwise_conv1d(cin, 2 * (kernel / 2) + 1), {cin, len}},
            {LayerSpec::conv_transpose1d(cin, cout, kernel + stride, stride, (kernel + stride - 1) / 2), {cin, len}},
            {LayerSpec::linear(cin + 1, cout), {small(rng), cin + 1}},
            {LayerSpec::leaky_relu(0.1), {cin, len}},
            {LayerSpec::gelu(), {cin, len}},
            {LayerSpec::layer_norm(cin + 2), {cin + 2, len}},
            {LayerSpec::conv2d(cin, cout, kernel, 1, stride, 1, pad, 0, dil, 1), {cin, len + 8, small(rng) + 1}},
        };
        for (const auto& c : cases) {
            auto res = check_layer(c.spec, c.shape, seed);
            INFO("seed " << seed << " layer " << layer_kind_name(c.spec.kind) << " input " << shape_str(c.shape)
                         << " at " << res.location);
            REQUIRE(res.passed(1e-5));
        }
    }
}

TEST_CASE("transposed conv length arithmetic holds for the decoder configurations") {
    // (rate, kernel, padding) as built by the decoder for each upsample rate
    for (std::size_t rate : {8, 4, 2, 2, 2, 5, 3}) {
        const std::size_t kernel = rate % 2 == 0 ? 2 * rate : 2 * rate + 1;
        const std::size_t padding = (kernel - rate) / 2;
        for (std::size_t in_len : {1, 2, 7, 10, 33}) {
            auto x = Var<float>::constant(Tensor<float>({2, in_len}, 1.f));
            auto w = Var<float>::constant(Tensor<float>({2, 3, kernel}, 0.5f));
            auto y = conv_transpose1d(x, w, Var<float>{}, rate, padding);
            CHECK(y.shape()[1] == conv_transpose_out_len(in_len, kernel, rate, padding));
            CHECK(y.shape()[1] == in_len * rate + (kernel - rate) - 2 * padding);
            CHECK(y.shape()[1] == in_len * rate);
        }
    }
}

TEST_CASE("forward is bitwise deterministic") {
    Rng rng(11);
    ParamSet<float> params;
    Layer<float> conv(LayerSpec::conv1d_same(3, 5, 7, 2), "c", params, rng);
    Layer<float> norm(LayerSpec::layer_norm(5), "n", params, rng);
    auto x = Var<float>::constant(random_tensor<float>({3, 50}, rng));
    auto a = norm.forward(conv.forward(x));
    auto b = norm.forward(conv.forward(x));
    CHECK(a.value().bitwise_equal(b.value()));
}

TEST_CASE("graphs reject unsupported shapes at construction time") {
    auto a = Var<double>::constant(Tensor<double>({2, 3}));
    auto b = Var<double>::constant(Tensor<double>({3, 2}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(sum(a).node()->value.reshaped({2}), ShapeError);
}

TEST_CASE("adamw with zero grads applies exactly the decoupled decay") {
    ParamSet<double> params;
    auto p = params.add("p", Tensor<double>::vector({1.0, -3.0, 0.25}));
    AdamWState<double> state;
    AdamWConfig cfg;
    REQUIRE(adamw_step(params, state, cfg, 0.01));
    const double f = 1.0 - 0.01 * 0.001;
    CHECK(p.value()[0] == 1.0 * f);
    CHECK(p.value()[1] == -3.0 * f);
    CHECK(p.value()[2] == 0.25 * f);
    CHECK(state.step == 1);
}

TEST_CASE("adamw with no decay and zero grads is the identity") {
    ParamSet<double> params;
    auto p = params.add("p", Tensor<double>::vector({1.0, -3.0}));
    AdamWState<double> state;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) REQUIRE(adamw_step(params, state, cfg, 0.1));
    CHECK(p.value()[0] == 1.0);
    CHECK(p.value()[1] == -3.0);
}

TEST_CASE("first adamw step moves against the gradient by about lr") {
    ParamSet<double> params;
    auto p = params.add("p", Tensor<double>::vector({0.0, 0.0, 0.0}));
    p.mutable_grad()[0] = 2.0;
    p.mutable_grad()[1] = -0.5;
    p.mutable_grad()[2] = 1e-3;
    AdamWState<double> state;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    const double lr = 0.01;
    REQUIRE(adamw_step(params, state, cfg, lr));
    // bias-corrected moments give m_hat = g and v_hat = g^2 on step one
    for (std::size_t i = 0; i < 3; ++i) {
        const double g = p.grad()[i];
        const double expected = -lr * g / (std::abs(g) + cfg.eps);
        CHECK(p.value()[i] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(std::signbit(p.value()[i]) != std::signbit(g));
    }
}

TEST_CASE("adamw rejects non-finite gradients and bad learning rates") {
    ParamSet<float> params;
    auto p = params.add("p", Tensor<float>::vector({1.0f, 2.0f}));
    p.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
    AdamWState<float> state;
    CHECK_FALSE(adamw_step(params, state, AdamWConfig{}, 0.01));
    CHECK(p.value()[0] == 1.0f);
    CHECK(state.step == 0);
    CHECK_THROWS_AS((void)adamw_step(params, state, AdamWConfig{}, 0.0), std::invalid_argument);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
    Rng rng(5);
    Checkpoint ckpt;
    ckpt.put("encoder/stem/weight", random_tensor<float>({4, 3, 7}, rng));
    ckpt.put("vq/0/0/embeddings", random_tensor<float>({16, 8}, rng));
    ckpt.put("scalar", Tensor<float>::scalar(3.5f));
    ckpt.put("empty", Tensor<float>({0, 4}));
    ckpt.metadata = {{"kind", "test"}, {"n", 3}};
    const auto path = std::filesystem::temp_directory_path() / "vqd_ckpt_roundtrip.bin";
    save_checkpoint(path, ckpt);
    const Checkpoint loaded = load_checkpoint(path);
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].first == ckpt.tensors[i].first);
        CHECK(loaded.tensors[i].second.bitwise_equal(ckpt.tensors[i].second));
    }
    CHECK(loaded.metadata == ckpt.metadata);
    CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(ckpt));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects truncated and inconsistent files") {
    Checkpoint ckpt;
    ckpt.put("a", Tensor<float>({2, 2}, 1.f));
    auto bytes = serialize_checkpoint(ckpt);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    CHECK_THROWS(deserialize_checkpoint(truncated));
    CHECK_THROWS(deserialize_checkpoint(std::vector<char>(3)));
    Checkpoint bad;
    bad.put("__metadata__", Tensor<float>({1}));
    CHECK_THROWS_AS(serialize_checkpoint(bad), std::invalid_argument);
}

TEST_CASE("checkpoint preserves NaN payload bits") {
    Checkpoint ckpt;
    Tensor<float> t({3});
    t[0] = std::numeric_limits<float>::quiet_NaN();
    t[1] = -0.0f;
    t[2] = std::numeric_limits<float>::denorm_min();
    ckpt.put("odd", t);
    auto loaded = deserialize_checkpoint(serialize_checkpoint(ckpt));
    CHECK(loaded.at("odd").bitwise_equal(t));
}
