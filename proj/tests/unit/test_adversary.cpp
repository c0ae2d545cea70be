#include <doctest.h>

#include <cmath>
#include <limits>

#include "support/helpers.hpp"
#include "support/tiny.hpp"
#include "vqd/adversary/train.hpp"
#include "vqd/numerics/gradcheck.hpp"

using namespace vqd;
using vqd::testing::project;
using vqd::testing::random_tensor;
using vqd::testing::tiny_bank;
using vqd::testing::tiny_codec;

namespace {

// Hand-built outputs: one sub-discriminator per entry, each with a constant score map.
DiscriminatorOutput<double> constant_scores(const std::vector<double>& values, std::size_t n = 6) {
    DiscriminatorOutput<double> out;
    for (std::size_t k = 0; k < values.size(); ++k) {
        SubDiscriminatorOutput<double> s;
        s.name = "d" + std::to_string(k);
        s.score = Var<double>::parameter(Tensor<double>(Shape{n}, values[k]));
        s.features.push_back(s.score);
        out.push_back(std::move(s));
    }
    return out;
}

DiscriminatorOutput<double> features_like(const DiscriminatorOutput<double>& src, double offset) {
    DiscriminatorOutput<double> out;
    for (const auto& s : src) {
        SubDiscriminatorOutput<double> o;
        o.name = s.name;
        for (const auto& f : s.features) {
            Tensor<double> t = f.value();
            for (auto& v : t.values()) v += offset;
            o.features.push_back(Var<double>::parameter(std::move(t)));
        }
        o.score = o.features.back();
        out.push_back(std::move(o));
    }
    return out;
}

std::vector<AudioBuffer> tone_corpus(std::size_t n, std::size_t len, int sr) {
    std::vector<AudioBuffer> out;
    for (std::size_t i = 0; i < n; ++i) {
        AudioBuffer a;
        a.sample_rate = sr;
        const double f = 200.0 + 150.0 * static_cast<double>(i);
        for (std::size_t t = 0; t < len; ++t) {
            a.samples.push_back(static_cast<float>(0.4 * std::sin(2.0 * 3.14159265358979 * f * t / sr)));
        }
        out.push_back(std::move(a));
    }
    return out;
}

TrainConfig tiny_train(std::size_t steps) {
    TrainConfig c;
    c.steps = steps;
    c.batch_size = 2;
    c.segment = 96;
    c.optim.lr = 2e-3;
    c.mel_scales = {{16, 4}, {32, 8}};
    c.steps_per_epoch = 2;
    return c;
}

}  // namespace

TEST_CASE("period view folds audio into phases and time columns") {
    Tensor<double> a(Shape{20});
    for (std::size_t i = 0; i < 20; ++i) a[i] = static_cast<double>(i);
    auto v = period_view(Var<double>::constant(a), 5);
    REQUIRE(v.shape() == Shape{1, 5, 4});
    for (std::size_t phase = 0; phase < 5; ++phase) {
        for (std::size_t col = 0; col < 4; ++col) CHECK(v.value()[phase * 4 + col] == static_cast<double>(col * 5 + phase));
    }
    // length 22 pads to 25 by reflection: 20, 19, 18
    Tensor<double> b(Shape{22});
    for (std::size_t i = 0; i < 22; ++i) b[i] = static_cast<double>(i);
    auto w = period_view(Var<double>::constant(b), 5);
    REQUIRE(w.shape() == Shape{1, 5, 5});
    CHECK(w.value()[0 * 5 + 4] == 20.0);
    CHECK(w.value()[2 * 5 + 4] == 20.0);
    CHECK(w.value()[4 * 5 + 4] == 18.0);
}

TEST_CASE("bank structure and scale pooling") {
    DiscriminatorBank<double> bank(tiny_bank());
    CHECK(bank.size() == 6);
    Rng rng(1);
    auto out = bank.discriminate(Var<double>::constant(random_tensor<double>({64}, rng)));
    REQUIRE(out.size() == 6);
    CHECK(out[0].name == "disc/period/0");
    CHECK(out[2].name == "disc/scale/0");
    CHECK(out[4].name == "disc/stft/0");
    for (const auto& s : out) {
        CHECK_FALSE(s.features.empty());
        CHECK(s.score.value().all_finite());
    }
    // first scale layer keeps length, so the x2 scale sees half the samples
    CHECK(out[2].features[0].shape() == Shape{2, 64});
    CHECK(out[3].features[0].shape() == Shape{2, 32});
    CHECK(bank.spec().min_length() == 32);
    CHECK_THROWS_WITH(bank.discriminate(Var<double>::constant(Tensor<double>(Shape{31}))),
                      doctest::Contains("minimum of 32"));
}

TEST_CASE("full and desk bank specs") {
    const auto p = DiscriminatorBankSpec::full();
    CHECK(p.period.periods == std::vector<std::size_t>{5, 8, 13, 19, 30});
    CHECK(p.period.kernel == 5);
    CHECK(p.period.stride == 3);
    CHECK(p.stft.n_ffts == std::vector<std::size_t>{1024, 2048, 512, 256, 128});
    CHECK(p.stft.hops == std::vector<std::size_t>{256, 512, 128, 64, 32});
    CHECK(p.stft.filters == 32);
    CHECK(p.min_length() == 2048);
    CHECK_NOTHROW(DiscriminatorBankSpec::desk().validate());
    auto bad = p;
    bad.period.periods = {5, 5};
    CHECK_THROWS(bad.validate());
    bad = p;
    bad.stft.hops.pop_back();
    CHECK_THROWS(bad.validate());
    const auto back = bank_spec_from_json(to_json(DiscriminatorBankSpec::desk()));
    CHECK(to_json(back) == to_json(DiscriminatorBankSpec::desk()));
    CHECK_THROWS(bank_spec_from_json(nlohmann::json{{"mpd", 1}}));
}

TEST_CASE("LSGAN discriminator loss closed forms") {
    CHECK(lsgan_d_loss(constant_scores({1, 1, 1}), constant_scores({0, 0, 0})).item() == 0.0);
    CHECK(lsgan_d_loss(constant_scores({0, 0, 0}), constant_scores({1, 1, 1})).item() == 6.0);
    CHECK(lsgan_d_loss(constant_scores({0.5}), constant_scores({0.5})).item() == 0.5);
    CHECK(lsgan_d_loss(constant_scores({0.5, 0.5}), constant_scores({0.5, 0.5})).item() == 1.0);
    CHECK_THROWS(lsgan_d_loss(constant_scores({1}), constant_scores({1, 1})));
}

TEST_CASE("LSGAN generator loss closed forms") {
    CHECK(lsgan_g_loss(constant_scores({1, 1})).item() == 0.0);
    CHECK(lsgan_g_loss(constant_scores({0, 0, 0})).item() == 3.0);
    CHECK(lsgan_g_loss(constant_scores({0.5})).item() == 0.25);
}

TEST_CASE("feature matching closed forms") {
    Rng rng(2);
    DiscriminatorOutput<double> real;
    for (int k = 0; k < 3; ++k) {
        SubDiscriminatorOutput<double> s;
        s.name = "d";
        for (std::size_t l = 1; l <= 3; ++l) s.features.push_back(Var<double>::parameter(random_tensor<double>({l, 5}, rng)));
        s.score = s.features.back();
        real.push_back(std::move(s));
    }
    CHECK(feature_matching_loss(real, features_like(real, 0.0)).item() == 0.0);
    for (double c : {0.25, -1.5, 3.0}) {
        CHECK(feature_matching_loss(real, features_like(real, c)).item() == doctest::Approx(std::abs(c)).epsilon(1e-12));
    }
    auto fake = features_like(real, 0.7);
    auto loss = feature_matching_loss(real, fake);
    backward(loss);
    CHECK_FALSE(real[0].features[0].has_grad());
    CHECK(fake[0].features[0].has_grad());
    auto short_list = fake;
    short_list[1].features.pop_back();
    CHECK_THROWS(feature_matching_loss(real, short_list));
    short_list.pop_back();
    CHECK_THROWS(feature_matching_loss(real, short_list));
}

TEST_CASE("generator loss composition") {
    DiscriminatorBank<double> bank(tiny_bank());
    Rng rng(3);
    const auto y = Var<double>::constant(random_tensor<double>({64}, rng, -0.5, 0.5));
    const auto y_hat = Var<double>::constant(random_tensor<double>({64}, rng, -0.5, 0.5));
    const auto commit = Var<double>::constant(Tensor<double>::scalar(0.125));
    const MelConfig mel = vqd::testing::tiny_mel(8);
    const std::vector<MelScale> scales{{16, 4}, {32, 8}};

    GanLossWeights w;
    auto full = generator_total_loss(y, y_hat, &bank, w, commit, mel, scales);
    CHECK(full.mel.item() > 0);
    CHECK(full.adv.item() >= 0);
    CHECK(full.fm.item() > 0);
    CHECK(full.total.item() ==
          doctest::Approx(45 * full.mel.item() + full.adv.item() + 2 * full.fm.item() + 0.125).epsilon(1e-12));

    GanLossWeights zero_mel_fm{0.0, 0.0, 1.0};
    auto adv_only = generator_total_loss(y, y_hat, &bank, zero_mel_fm, commit, mel, scales);
    CHECK(adv_only.total.item() == doctest::Approx(adv_only.adv.item() + 0.125).epsilon(1e-12));

    GanLossWeights double_fm = w;
    double_fm.fm = 4.0;
    auto fm2 = generator_total_loss(y, y_hat, &bank, double_fm, commit, mel, scales);
    CHECK(fm2.total.item() - full.total.item() == doctest::Approx(2 * full.fm.item()).epsilon(1e-9));

    // a bank that scores everything 1 is fooled perfectly; y_hat = y leaves only commitment
    for (std::size_t k = 0; k < 6; ++k) {
        std::string prefix = k < 2 ? "disc/period/" + std::to_string(k) : k < 4 ? "disc/scale/" + std::to_string(k - 2)
                                                                              : "disc/stft/" + std::to_string(k - 4);
        std::size_t last = 0;
        while (bank.params().contains(prefix + "/" + std::to_string(last + 1) + "/weight")) ++last;
        bank.params().get(prefix + "/" + std::to_string(last) + "/weight").mutable_value().fill(0.0);
        bank.params().get(prefix + "/" + std::to_string(last) + "/bias").mutable_value().fill(1.0);
    }
    auto fooled = generator_total_loss(y, y, &bank, w, commit, mel, scales);
    CHECK(fooled.adv.item() == 0.0);
    CHECK(fooled.fm.item() == 0.0);
    CHECK(fooled.mel.item() == 0.0);
    CHECK(fooled.total.item() == 0.125);

    auto no_bank = generator_total_loss<double>(y, y_hat, nullptr, w, commit, mel, scales);
    CHECK(no_bank.adv.item() == 0.0);
    CHECK(no_bank.total.item() == doctest::Approx(45 * no_bank.mel.item() + 0.125).epsilon(1e-12));
    CHECK_THROWS(generator_total_loss(y, y_hat, &bank, GanLossWeights{-1, 0, 0}, commit, mel, scales));
}

TEST_CASE("components are nonnegative on random inputs") {
    DiscriminatorBank<double> bank(tiny_bank());
    Rng rng(4);
    for (int i = 0; i < 5; ++i) {
        const auto y = Var<double>::constant(random_tensor<double>({48}, rng));
        const auto y_hat = Var<double>::constant(random_tensor<double>({48}, rng));
        auto g = generator_total_loss(y, y_hat, &bank, GanLossWeights{}, Var<double>(), vqd::testing::tiny_mel(8),
                                      {{16, 4}});
        CHECK(g.mel.item() >= 0);
        CHECK(g.adv.item() >= 0);
        CHECK(g.fm.item() >= 0);
        CHECK(g.total.item() >= 0);
        CHECK(discriminator_loss(bank, y, y_hat).item() >= 0);
    }
}

TEST_CASE("mel loss sends no gradient to discriminator parameters") {
    DiscriminatorBank<double> bank(tiny_bank());
    Rng rng(5);
    const auto y = Var<double>::constant(random_tensor<double>({64}, rng));
    const auto y_hat = Var<double>::parameter(random_tensor<double>({64}, rng));
    GanLossWeights mel_only{45.0, 0.0, 0.0};
    auto g = generator_total_loss(y, y_hat, &bank, mel_only, Var<double>(), vqd::testing::tiny_mel(8), {{16, 4}});
    backward(g.total);
    for (const auto& [name, v] : bank.params().entries()) {
        bool zero = true;
        for (double x : v.grad()) zero = zero && x == 0.0;
        CHECK_MESSAGE(zero, name);
    }
    CHECK(y_hat.has_grad());
}

TEST_CASE("discriminator loss gives the generator no gradient") {
    DiscriminatorBank<double> bank(tiny_bank());
    Rng rng(6);
    const auto y = Var<double>::constant(random_tensor<double>({64}, rng));
    const auto y_hat = Var<double>::parameter(random_tensor<double>({64}, rng));
    backward(discriminator_loss(bank, y, y_hat));
    CHECK_FALSE(y_hat.has_grad());
    CHECK(bank.params().entries()[0].second.has_grad());
}

TEST_CASE("GAN losses pass finite-difference checks on a tiny bank") {
    DiscriminatorBank<double> bank(tiny_bank());
    Rng rng(7);
    const auto y = Var<double>::constant(random_tensor<double>({64}, rng, -0.5, 0.5));
    auto y_hat = Var<double>::parameter(random_tensor<double>({64}, rng, -0.5, 0.5));
    std::vector<std::pair<std::string, Var<double>>> d_leaves, g_leaves{{"y_hat", y_hat}};
    for (const auto& [n, v] : bank.params().entries()) d_leaves.emplace_back(n, v);
    GradCheckOptions opt;
    opt.epsilon = 3e-5;
    opt.max_coords_per_leaf = 12;

    SUBCASE("discriminator loss wrt discriminator parameters") {
        auto r = grad_check([&] { return discriminator_loss(bank, y, y_hat); }, d_leaves, opt);
        INFO(r.location);
        CHECK(r.passed(1e-5));
    }
    SUBCASE("generator adversarial loss wrt reconstruction") {
        opt.max_coords_per_leaf = 0;
        auto r = grad_check([&] { return lsgan_g_loss(bank.discriminate(y_hat)); }, g_leaves, opt);
        INFO(r.location);
        CHECK(r.passed(1e-5));
    }
    SUBCASE("feature matching wrt reconstruction") {
        opt.max_coords_per_leaf = 0;
        auto r = grad_check([&] { return feature_matching_loss(bank.discriminate(y), bank.discriminate(y_hat)); },
                            g_leaves, opt);
        INFO(r.location);
        CHECK(r.passed(1e-5));
    }
}

TEST_CASE("skip budget aborts beyond the allowed fraction") {
    SkipBudget b(200, 0.01);
    CHECK(b.allowed() == 2);
    b.skip(1, "x");
    b.skip(2, "x");
    CHECK_THROWS_AS(b.skip(3, "x"), TrainingAborted);
    SkipBudget none(50, 0.01);
    CHECK_THROWS_WITH(none.skip(7, "nan"), doctest::Contains("step 7"));
}

TEST_CASE("training config JSON round trip") {
    TrainConfig c = tiny_train(10);
    c.frozen_parts = {"encoder"};
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_WITH(train_config_from_json(nlohmann::json{{"stpes", 3}}), doctest::Contains("train.stpes"));
    c.frozen_parts = {"decoderr"};
    CHECK_THROWS(c.validate());
}

TEST_CASE("training loop records metrics, decays lr and is reproducible") {
    const auto corpus = tone_corpus(4, 128, 8000);
    auto run = [&](std::vector<StepRecord>& log) {
        auto codec = build_codec(tiny_codec());
        DiscriminatorBank<float> bank(tiny_bank());
        auto r = dlt_train(corpus, *codec, &bank, tiny_train(6), [&](const StepRecord& s) { log.push_back(s); });
        return std::make_pair(serialize_checkpoint(codec->to_checkpoint()), r);
    };
    std::vector<StepRecord> log1, log2;
    auto [bytes1, r1] = run(log1);
    auto [bytes2, r2] = run(log2);
    CHECK(bytes1 == bytes2);
    REQUIRE(r1.log.size() == 6);
    CHECK(log1.size() == 6);
    CHECK(r1.epochs.size() == 3);
    CHECK(r1.log[0].lr == doctest::Approx(2e-3));
    CHECK(r1.log[2].lr == doctest::Approx(2e-3 * 0.98));
    CHECK(r1.log[5].lr == doctest::Approx(2e-3 * 0.98 * 0.98));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(r1.log[i].mel == r2.log[i].mel);
        CHECK(r1.log[i].adv_d > 0);
        CHECK(r1.log[i].fm > 0);
        CHECK(r1.log[i].usage > 0);
    }
    const auto j = to_json(r1.log[0]);
    for (const char* k : {"step", "epoch", "mel", "adv_g", "adv_d", "fm", "commit", "ppl", "usage", "lr"}) {
        CHECK(j.contains(k));
    }
    CHECK(r1.skipped == 0);
}

TEST_CASE("without discriminators the loop is deterministic regression") {
    const auto corpus = tone_corpus(3, 100, 8000);
    auto run = [&] {
        auto codec = build_codec(tiny_codec());
        TrainConfig c = tiny_train(5);
        c.adversarial = false;
        auto r = dlt_train(corpus, *codec, nullptr, c);
        return std::make_pair(serialize_checkpoint(codec->to_checkpoint()), r);
    };
    auto [a, ra] = run();
    auto [b, rb] = run();
    CHECK(a == b);
    for (const auto& s : ra.log) {
        CHECK(s.adv_g == 0.0);
        CHECK(s.adv_d == 0.0);
        CHECK(s.fm == 0.0);
    }
}

TEST_CASE("frozen parts keep their parameters") {
    const auto corpus = tone_corpus(2, 100, 8000);
    auto codec = build_codec(tiny_codec());
    const Checkpoint before = codec->to_checkpoint();
    TrainConfig c = tiny_train(3);
    c.adversarial = false;
    c.frozen_parts = {"encoder", "decoder"};
    (void)dlt_train(corpus, *codec, nullptr, c);
    const Checkpoint after = codec->to_checkpoint();
    for (const auto& name : codec->part_names("encoder")) CHECK(after.at(name).bitwise_equal(before.at(name)));
    for (const auto& name : codec->part_names("decoder")) CHECK(after.at(name).bitwise_equal(before.at(name)));
    CHECK_FALSE(after.at("vq/0/pre/weight").bitwise_equal(before.at("vq/0/pre/weight")));
}

TEST_CASE("non-finite losses skip steps, restore state and abort over budget") {
    const auto corpus = tone_corpus(2, 100, 8000);
    auto codec = build_codec(tiny_codec());
    DiscriminatorBank<float> bank(tiny_bank());
    bank.params().entries()[0].second.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
    const auto before = serialize_checkpoint(codec->to_checkpoint());

    TrainConfig lenient = tiny_train(4);
    lenient.max_skip_fraction = 1.0;
    auto r = dlt_train(corpus, *codec, &bank, lenient);
    CHECK(r.skipped == 4);
    for (const auto& s : r.log) CHECK(s.skipped);
    CHECK(serialize_checkpoint(codec->to_checkpoint()) == before);

    TrainConfig strict = tiny_train(150);
    CHECK_THROWS_AS(dlt_train(corpus, *codec, &bank, strict), TrainingAborted);
}

TEST_CASE("training rejects bad corpora") {
    auto codec = build_codec(tiny_codec());
    DiscriminatorBank<float> bank(tiny_bank());
    CHECK_THROWS(dlt_train({}, *codec, &bank, tiny_train(1)));
    CHECK_THROWS_WITH(dlt_train(tone_corpus(1, 100, 16000), *codec, &bank, tiny_train(1)),
                      doctest::Contains("sample rate"));
    CHECK_THROWS_WITH(dlt_train(tone_corpus(1, 20, 8000), *codec, &bank, tiny_train(1)),
                      doctest::Contains("at least 32"));
}
