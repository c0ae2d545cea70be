#include <doctest.h>

#include <cmath>
#include <limits>

#include "support/helpers.hpp"
#include "vqd/numerics/gradcheck.hpp"
#include "vqd/quantizer/vq.hpp"

using namespace vqd;
using vqd::testing::project;
using vqd::testing::random_tensor;

namespace {

VQConfig identity_cfg(std::size_t groups, std::size_t residual, std::size_t codes, std::size_t dim) {
    VQConfig c;
    c.n_group = groups;
    c.n_residual = residual;
    c.n_codes = codes;
    c.code_dim = dim;
    c.latent_dim = dim * groups;
    c.factorized = false;
    return c;
}

// Direct entropy evaluation, written independently of the library.
double oracle_perplexity(const Histogram& h) {
    long double total = 0;
    for (auto c : h) total += c;
    long double acc = 0;
    for (auto c : h) {
        if (c == 0) continue;
        const long double p = c / total;
        acc += p * std::log(p);
    }
    return static_cast<double>(std::exp(-acc));
}

// Gaussian blobs around well-separated centres.
Tensor<double> cluster_batch(const std::vector<std::vector<double>>& centres, std::size_t per, double spread, Rng& rng) {
    const std::size_t d = centres[0].size();
    Tensor<double> out(Shape{centres.size() * per, d});
    std::normal_distribution<double> noise(0.0, spread);
    for (std::size_t c = 0; c < centres.size(); ++c) {
        for (std::size_t i = 0; i < per; ++i) {
            for (std::size_t j = 0; j < d; ++j) out.at2(c * per + i, j) = centres[c][j] + noise(rng);
        }
    }
    return out;
}

std::vector<std::vector<double>> ring_centres(std::size_t k, double radius) {
    std::vector<std::vector<double>> c;
    for (std::size_t i = 0; i < k; ++i) {
        const double a = 2.0 * 3.14159265358979 * static_cast<double>(i) / static_cast<double>(k);
        c.push_back({radius * std::cos(a), radius * std::sin(a), 0.5 * static_cast<double>(i % 2)});
    }
    return c;
}

double residual_error(const Codebook<double>& cb, const Tensor<double>& x) {
    const auto idx = nearest_codes(cb, x);
    double e = 0;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        for (std::size_t j = 0; j < x.dim(1); ++j) {
            const double v = x.at2(i, j) - cb.embeddings.at2(idx[i], j);
            e += v * v;
        }
    }
    return e;
}

}  // namespace

TEST_CASE("a codebook holding the exact input selects it with zero commitment") {
    Rng rng(1);
    ParamSet<double> params;
    Quantizer<double> vq(identity_cfg(1, 1, 4, 3), params, rng);
    Tensor<double> e(Shape{4, 3}, {0, 0, 0, 1, 2, 3, -1, 0.5, 2, 4, 4, 4});
    vq.codebook(0, 0).set_embeddings(e);
    auto z = Var<double>::constant(Tensor<double>(Shape{1, 3}, {-1, 0.5, 2}));
    auto out = vq.quantize(z, false);
    CHECK(out.indices[0][0][0] == 2);
    CHECK(out.commitment_loss.item() == 0.0);
    CHECK(out.quantized.value() == z.value());
}

TEST_CASE("two residual rounds pick v then w and reconstruct exactly") {
    Rng rng(2);
    ParamSet<double> params;
    Quantizer<double> vq(identity_cfg(1, 2, 2, 2), params, rng);
    // round one: {v, far}, round two: {w, far}
    vq.codebook(0, 0).set_embeddings(Tensor<double>(Shape{2, 2}, {3, 1, -50, -50}));
    vq.codebook(0, 1).set_embeddings(Tensor<double>(Shape{2, 2}, {60, 60, 0.5, -0.25}));
    auto z = Var<double>::constant(Tensor<double>(Shape{1, 2}, {3.5, 0.75}));
    auto out = vq.quantize(z, false);
    CHECK(out.indices[0][0][0] == 0);
    CHECK(out.indices[0][1][0] == 1);
    CHECK(out.quantized.value()[0] == 3.5);
    CHECK(out.quantized.value()[1] == 0.75);
    CHECK(out.commitment_loss.item() == 0.0);
}

TEST_CASE("nearest code agrees with a brute-force L2 table") {
    Rng rng(3);
    Codebook<double> cb(4, 2);
    cb.set_embeddings(random_tensor<double>({4, 2}, rng));
    const Tensor<double> x = random_tensor<double>({1000, 2}, rng, -2, 2);
    const auto idx = nearest_codes(cb, x);
    for (std::size_t i = 0; i < 1000; ++i) {
        double table[4];
        for (std::size_t c = 0; c < 4; ++c) {
            const double a = x.at2(i, 0) - cb.embeddings.at2(c, 0), b = x.at2(i, 1) - cb.embeddings.at2(c, 1);
            table[c] = a * a + b * b;
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < 4; ++c) {
            if (table[c] < table[best]) best = c;
        }
        CHECK(idx[i] == best);
    }
}

TEST_CASE("EMA converges geometrically with ratio 0.8 on a repeated batch") {
    Codebook<double> cb(2, 2);
    cb.set_embeddings(Tensor<double>(Shape{2, 2}, {0, 0, 10, 10}));
    // one vector per code, so each cluster size stays at exactly 1
    const Tensor<double> batch(Shape{2, 2}, {1, -1, 9, 12});
    const std::vector<std::uint32_t> assign{0, 1};
    double prev = std::hypot(0 - 1.0, 0 + 1.0);
    for (int step = 0; step < 20; ++step) {
        ema_update(cb, assign, batch, 0.8, 1e-5);
        const double err = std::hypot(cb.embeddings.at2(0, 0) - 1.0, cb.embeddings.at2(0, 1) + 1.0);
        CHECK(err / prev == doctest::Approx(0.8).epsilon(1e-4));
        prev = err;
    }
}

TEST_CASE("a code with no assignments keeps its embedding up to smoothing") {
    Codebook<double> cb(3, 2);
    cb.set_embeddings(Tensor<double>(Shape{3, 2}, {0, 0, 5, 5, -7, 2}));
    const Tensor<double> batch(Shape{4, 2}, {0.1, 0, -0.1, 0.2, 5, 5.2, 4.9, 5});
    const auto assign = nearest_codes(cb, batch);
    for (int i = 0; i < 5; ++i) ema_update(cb, assign, batch, 0.8, 1e-5);
    CHECK(cb.embeddings.at2(2, 0) == doctest::Approx(-7.0).epsilon(1e-3));
    CHECK(cb.embeddings.at2(2, 1) == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(cb.staleness[2] == 5);
    CHECK(cb.staleness[0] == 0);
}

TEST_CASE("two separated clusters: EMA reaches the cluster means") {
    Rng rng(4);
    Tensor<double> batch = cluster_batch({{-3, 0}, {3, 1}}, 200, 0.3, rng);
    double mean[2][2] = {};
    for (std::size_t i = 0; i < 400; ++i) {
        for (std::size_t j = 0; j < 2; ++j) mean[i / 200][j] += batch.at2(i, j) / 200.0;
    }
    Codebook<double> cb(2, 2);
    cb.set_embeddings(Tensor<double>(Shape{2, 2}, {-1, -1, 1, 1}));
    for (int step = 0; step < 50; ++step) ema_update(cb, nearest_codes(cb, batch), batch, 0.8, 1e-5);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(cb.embeddings.at2(c, j) - mean[c][j]) < 1e-2);
    }
}

TEST_CASE("commitment loss values") {
    auto a = Var<double>::constant(Tensor<double>::vector({1.0, 2.0}));
    CHECK(commitment_loss(a, a, 0.25).item() == 0.0);
    auto b = Var<double>::constant(Tensor<double>::vector({-4.0, 9.0}));
    CHECK(commitment_loss(a, b, 0.0).item() == 0.0);
    auto one = Var<double>::parameter(Tensor<double>::scalar(1.0));
    auto zero = Var<double>::parameter(Tensor<double>::scalar(0.0));
    auto l = commitment_loss(one, zero, 0.25);
    CHECK(l.item() == 0.25);
    backward(l);
    CHECK(one.grad()[0] == 0.5);
    CHECK_FALSE(zero.has_grad());
}

TEST_CASE("perplexity and usage closed forms") {
    for (std::size_t k = 1; k <= 40000; k = k < 300 ? k + 1 : k * 3 + 1) {
        for (std::int64_t c : {1, 7, 999983}) CHECK(perplexity(Histogram(k, c)) == static_cast<double>(k));
    }
    CHECK(perplexity({0, 0, 9, 0}) == 1.0);
    CHECK(perplexity({3, 1}) == doctest::Approx(1.754765).epsilon(1e-6));
    CHECK(std::log(perplexity({3, 1})) == doctest::Approx(0.562335).epsilon(1e-6));
    CHECK_THROWS_AS(perplexity({0, 0}), std::invalid_argument);
    CHECK(usage({1, 2, 3}) == 1.0);
    CHECK(usage({5, 0, 0, 5}) == 0.5);
    CHECK(usage({0, 0}) == 0.0);
}

TEST_CASE("perplexity is bounded by used codes and matches direct evaluation") {
    Rng rng(5);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
        Histogram h(k);
        for (auto& c : h) c = std::uniform_int_distribution<int>(0, 3)(rng) == 0 ? 0 : std::uniform_int_distribution<int>(0, 1000)(rng);
        h[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] += 1;
        const double p = perplexity(h);
        CHECK(p >= 1.0);
        CHECK(p <= usage(h) * static_cast<double>(k) * (1 + 1e-12));
        CHECK(std::abs(p - oracle_perplexity(h)) <= 1e-9 * p);
    }
}

TEST_CASE("dead-code reseeding") {
    Rng rng(6);
    Codebook<double> cb(3, 2);
    cb.set_embeddings(Tensor<double>(Shape{3, 2}, {0, 0, 1, 1, 2, 2}));
    const Tensor<double> donors(Shape{2, 2}, {7, 7, 8, 8});
    const Tensor<double> before = cb.embeddings;
    CHECK(reseed_dead_codes(cb, donors, 20, rng) == 0);
    CHECK(cb.embeddings == before);

    cb.staleness[1] = 20;
    CHECK(reseed_dead_codes(cb, donors, 20, rng) == 1);
    std::size_t changed = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const bool same = cb.embeddings.at2(c, 0) == before.at2(c, 0) && cb.embeddings.at2(c, 1) == before.at2(c, 1);
        if (!same) {
            ++changed;
            CHECK(c == 1);
            CHECK((cb.embeddings.at2(c, 0) == 7 || cb.embeddings.at2(c, 0) == 8));
        }
    }
    CHECK(changed == 1);
    CHECK(cb.staleness[1] == 0);
}

TEST_CASE("adversarial init recovers high usage through reseeding") {
    Rng rng(7);
    const auto centres = ring_centres(8, 4.0);
    Codebook<double> cb(8, 3);
    Tensor<double> far(Shape{8, 3});
    for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t j = 0; j < 3; ++j) far.at2(c, j) = 100.0 + static_cast<double>(c) + j;
    }
    cb.set_embeddings(far);
    double final_usage = 0;
    for (int step = 0; step < 100; ++step) {
        Tensor<double> batch = cluster_batch(centres, 32, 0.2, rng);
        const auto idx = nearest_codes(cb, batch);
        Histogram h(8, 0);
        for (auto i : idx) ++h[i];
        final_usage = usage(h);
        ema_update(cb, idx, batch, 0.8, 1e-5);
        reseed_dead_codes(cb, batch, 20, rng);
    }
    CHECK(final_usage >= 0.9);
}

TEST_CASE("eight-cluster mixture reaches full usage and near-uniform perplexity") {
    Rng rng(8);
    const auto centres = ring_centres(8, 4.0);
    ParamSet<double> params;
    VQConfig cfg = identity_cfg(1, 1, 8, 3);
    Quantizer<double> vq(cfg, params, rng);
    QuantizeOutput<double> out;
    for (int step = 0; step < 100; ++step) {
        auto z = Var<double>::constant(cluster_batch(centres, 32, 0.2, rng));
        out = vq.quantize(z, true, &rng);
    }
    CHECK(usage(out.histograms[0]) == 1.0);
    CHECK(perplexity(out.histograms[0]) >= 7.2);
}

TEST_CASE("straight-through path passes grad_check with codes frozen") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        VQConfig cfg;
        cfg.n_group = 2;
        cfg.n_residual = 2;
        cfg.n_codes = 5;
        cfg.code_dim = 3;
        cfg.latent_dim = 4;
        ParamSet<double> params;
        Quantizer<double> vq(cfg, params, rng);
        for (auto& cb : vq.codebooks()) cb.set_embeddings(random_tensor<double>({5, 3}, rng));
        auto z = Var<double>::parameter(random_tensor<double>({6, 4}, rng));
        const Tensor<double> r = random_tensor<double>({6, 4}, rng);
        std::vector<std::pair<std::string, Var<double>>> leaves{{"latents", z}};
        for (const auto& [n, v] : params.entries()) leaves.emplace_back(n, v);
        auto fn = [&] {
            auto out = vq.quantize(z, false);
            return add(project(out.quantized, r), scale(out.commitment_loss, 3.0));
        };
        auto res = grad_check(fn, leaves);
        INFO("seed " << seed << " at " << res.location);
        CHECK(res.passed(1e-5));
    }
}

TEST_CASE("straight-through gradient equals post * pre applied to the upstream gradient") {
    Rng rng(9);
    VQConfig cfg;
    cfg.n_codes = 4;
    cfg.code_dim = 5;
    cfg.latent_dim = 3;
    cfg.commitment_weight = 0.0;
    ParamSet<double> params;
    Quantizer<double> vq(cfg, params, rng);
    vq.codebook(0, 0).set_embeddings(random_tensor<double>({4, 5}, rng));
    auto z = Var<double>::parameter(random_tensor<double>({2, 3}, rng));
    auto out = vq.quantize(z, false);
    backward(sum(out.quantized));
    // semi-orthogonal init: post * pre = I, so d sum / dz = 1 everywhere
    for (double g : z.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grouped quantization equals independent quantization of each slice") {
    Rng rng(10);
    ParamSet<double> p2, p1a, p1b;
    Quantizer<double> grouped(identity_cfg(2, 2, 6, 3), p2, rng);
    Quantizer<double> a(identity_cfg(1, 2, 6, 3), p1a, rng), b(identity_cfg(1, 2, 6, 3), p1b, rng);
    for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t r = 0; r < 2; ++r) {
            const auto e = random_tensor<double>({6, 3}, rng);
            grouped.codebook(g, r).set_embeddings(e);
            (g == 0 ? a : b).codebook(0, r).set_embeddings(e);
        }
    }
    const Tensor<double> x = random_tensor<double>({10, 6}, rng);
    auto whole = grouped.quantize(Var<double>::constant(x), false);
    Tensor<double> xa(Shape{10, 3}), xb(Shape{10, 3});
    for (std::size_t f = 0; f < 10; ++f) {
        for (std::size_t j = 0; j < 3; ++j) {
            xa.at2(f, j) = x.at2(f, j);
            xb.at2(f, j) = x.at2(f, 3 + j);
        }
    }
    auto qa = a.quantize(Var<double>::constant(xa), false), qb = b.quantize(Var<double>::constant(xb), false);
    for (std::size_t f = 0; f < 10; ++f) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(whole.quantized.value().at2(f, j) == qa.quantized.value().at2(f, j));
            CHECK(whole.quantized.value().at2(f, 3 + j) == qb.quantized.value().at2(f, j));
        }
    }
    CHECK(whole.indices[0] == qa.indices[0]);
    CHECK(whole.indices[1] == qb.indices[0]);
}

TEST_CASE("quantize plus EMA never increases residual error on a fixed batch") {
    Rng rng(11);
    const Tensor<double> batch = cluster_batch(ring_centres(6, 3.0), 20, 0.5, rng);
    Codebook<double> cb(6, 3);
    init_codebook(cb, batch, rng);
    double prev = residual_error(cb, batch);
    for (int step = 0; step < 50; ++step) {
        ema_update(cb, nearest_codes(cb, batch), batch, 0.8, 1e-5);
        const double err = residual_error(cb, batch);
        CHECK(err <= prev * (1 + 1e-6));
        prev = err;
    }
}

TEST_CASE("an extra residual round does not increase reconstruction error") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        ParamSet<double> params;
        Quantizer<double> vq(identity_cfg(1, 4, 8, 3), params, rng);
        const Tensor<double> x = random_tensor<double>({64, 3}, rng, -2, 2);
        // seed each stage from this batch's residuals, then freeze
        (void)vq.quantize(Var<double>::constant(x), true, &rng);
        std::vector<double> errors;
        for (std::size_t depth = 1; depth <= 4; ++depth) {
            ParamSet<double> p;
            Quantizer<double> shallow(identity_cfg(1, depth, 8, 3), p, rng);
            for (std::size_t r = 0; r < depth; ++r) shallow.codebook(0, r) = vq.codebook(0, r);
            const auto q = shallow.quantize(Var<double>::constant(x), false);
            double e = 0;
            for (std::size_t i = 0; i < x.size(); ++i) e += std::pow(x[i] - q.quantized.value()[i], 2);
            errors.push_back(e);
        }
        for (std::size_t d = 1; d < errors.size(); ++d) CHECK(errors[d] <= errors[d - 1]);
    }
}

TEST_CASE("histograms count every frame for every codebook") {
    Rng rng(12);
    VQConfig cfg;
    cfg.n_group = 2;
    cfg.n_residual = 3;
    cfg.n_codes = 7;
    cfg.code_dim = 4;
    cfg.latent_dim = 6;
    ParamSet<float> params;
    Quantizer<float> vq(cfg, params, rng);
    auto out = vq.quantize(Var<float>::constant(random_tensor<float>({33, 6}, rng)), true, &rng);
    REQUIRE(out.histograms.size() == 6);
    for (const auto& h : out.histograms) {
        std::int64_t total = 0;
        for (auto c : h) total += c;
        CHECK(total == 33);
    }
    for (const auto& g : out.indices) {
        for (const auto& r : g) {
            for (auto i : r) CHECK(i < 7);
        }
    }
}

TEST_CASE("dequantize reproduces the quantized forward value") {
    Rng rng(13);
    VQConfig cfg;
    cfg.n_group = 2;
    cfg.n_residual = 2;
    cfg.n_codes = 5;
    cfg.code_dim = 3;
    cfg.latent_dim = 4;
    ParamSet<double> params;
    Quantizer<double> vq(cfg, params, rng);
    for (auto& cb : vq.codebooks()) cb.set_embeddings(random_tensor<double>({5, 3}, rng));
    auto out = vq.quantize(Var<double>::constant(random_tensor<double>({9, 4}, rng)), false);
    auto back = vq.dequantize(out.indices);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.value()[i] == doctest::Approx(out.quantized.value()[i]).epsilon(1e-12));
    auto bad = out.indices;
    bad[0][0][0] = 5;
    CHECK_THROWS_AS(vq.dequantize(bad), std::out_of_range);
}

TEST_CASE("quantizer rejects bad inputs and configs") {
    Rng rng(14);
    ParamSet<float> params;
    VQConfig cfg = identity_cfg(1, 1, 4, 3);
    Quantizer<float> vq(cfg, params, rng);
    Tensor<float> x(Shape{2, 3});
    x[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(vq.quantize(Var<float>::constant(x), false), std::invalid_argument);
    CHECK_THROWS_AS(vq.quantize(Var<float>::constant(Tensor<float>(Shape{2, 4})), false), ShapeError);

    VQConfig bad = cfg;
    bad.code_dim = 5;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("factorized"), std::invalid_argument);
    bad = cfg;
    bad.latent_dim = 7;
    bad.n_group = 2;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.ema_decay = 1.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("semi-orthogonal projections compose to the identity") {
    Rng rng(15);
    auto [pre, post] = semi_orthogonal_pair<double>(4, 9, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 9; ++k) s += post.at2(i, k) * pre.at2(k, j);
            CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("codebook state round-trips through a checkpoint") {
    Rng rng(16);
    VQConfig cfg;
    cfg.n_group = 2;
    cfg.n_residual = 2;
    cfg.n_codes = 6;
    cfg.code_dim = 3;
    cfg.latent_dim = 4;
    ParamSet<float> params;
    Quantizer<float> vq(cfg, params, rng);
    (void)vq.quantize(Var<float>::constant(random_tensor<float>({20, 4}, rng)), true, &rng);
    Checkpoint ckpt;
    vq.save_state(ckpt);
    CHECK(ckpt.find("vq/1/0/embeddings") != nullptr);
    ParamSet<float> p2;
    Rng other(99);
    Quantizer<float> loaded(cfg, p2, other);
    loaded.load_state(ckpt);
    for (std::size_t i = 0; i < vq.codebooks().size(); ++i) {
        CHECK(loaded.codebooks()[i].embeddings.bitwise_equal(vq.codebooks()[i].embeddings));
        CHECK(loaded.codebooks()[i].staleness == vq.codebooks()[i].staleness);
    }
    const auto shapes = Quantizer<float>::state_shapes(cfg);
    CHECK(shapes.size() == ckpt.tensors.size());
}
