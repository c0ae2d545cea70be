#include "vqd/adversary/discriminators.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "vqd/dsp/mel.hpp"
#include "vqd/util/strict_json.hpp"

namespace vqd {

using nlohmann::json;

void DiscriminatorBankSpec::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("discriminators: " + m); };
    if (use_period) {
        if (period.periods.empty()) fail("no periods");
        for (std::size_t i = 0; i < period.periods.size(); ++i) {
            if (period.periods[i] < 1) fail("periods must be >= 1");
            if (i > 0 && period.periods[i] <= period.periods[i - 1]) fail("periods must be strictly increasing");
        }
        if (period.kernel < 1 || period.kernel % 2 == 0 || period.stride < 1) fail("period kernel must be odd, stride >= 1");
        if (period.channels.empty()) fail("period channels empty");
    }
    if (use_scale) {
        if (scale.n_scales < 1 || scale.channels.size() < 2) fail("scale stack needs >= 1 scale and >= 2 channel counts");
        if (scale.kernel % 2 == 0 || scale.stride < 1) fail("scale kernel must be odd, stride >= 1");
    }
    if (use_stft) {
        const auto& s = stft;
        if (s.n_ffts.empty() || s.n_ffts.size() != s.hops.size() || s.n_ffts.size() != s.windows.size()) {
            fail("STFT lists must be nonempty and of equal length");
        }
        for (std::size_t i = 0; i < s.n_ffts.size(); ++i) {
            if (s.windows[i] != s.n_ffts[i]) fail("STFT windows must equal their n_fft");
            if (s.hops[i] < 1 || s.hops[i] > s.n_ffts[i]) fail("STFT hop must be in [1, n_fft]");
        }
        if (s.filters < 1) fail("STFT filters must be >= 1");
    }
}

std::size_t DiscriminatorBankSpec::min_length() const {
    std::size_t n = 1;
    if (use_period) n = std::max(n, period.periods.back());
    if (use_scale) n = std::max(n, std::size_t{1} << (scale.n_scales - 1));
    if (use_stft) n = std::max(n, *std::max_element(stft.windows.begin(), stft.windows.end()));
    return n;
}

DiscriminatorBankSpec DiscriminatorBankSpec::full() { return {}; }

DiscriminatorBankSpec DiscriminatorBankSpec::desk() {
    DiscriminatorBankSpec s;
    s.period.channels = {8, 16, 32, 32};
    s.scale.channels = {8, 16, 32, 32, 32};
    s.stft.n_ffts = {256, 512, 128, 64, 32};
    s.stft.hops = {64, 128, 32, 16, 8};
    s.stft.windows = s.stft.n_ffts;
    s.stft.filters = 4;
    return s;
}

json to_json(const DiscriminatorBankSpec& s) {
    return json{{"use_period", s.use_period},
                {"use_scale", s.use_scale},
                {"use_stft", s.use_stft},
                {"seed", s.seed},
                {"period",
                 {{"periods", s.period.periods},
                  {"kernel", s.period.kernel},
                  {"stride", s.period.stride},
                  {"channels", s.period.channels}}},
                {"scale",
                 {{"n_scales", s.scale.n_scales},
                  {"channels", s.scale.channels},
                  {"kernel", s.scale.kernel},
                  {"stride", s.scale.stride}}},
                {"stft",
                 {{"n_ffts", s.stft.n_ffts},
                  {"hops", s.stft.hops},
                  {"windows", s.stft.windows},
                  {"filters", s.stft.filters}}}};
}

DiscriminatorBankSpec bank_spec_from_json(const json& j, DiscriminatorBankSpec s, const std::string& context) {
    StrictReader r(j, context);
    r.get("use_period", s.use_period).get("use_scale", s.use_scale).get("use_stft", s.use_stft).get("seed", s.seed);
    r.section("period", [&](const json& p, const std::string& ctx) {
        StrictReader pr(p, ctx);
        pr.get("periods", s.period.periods).get("kernel", s.period.kernel).get("stride", s.period.stride);
        pr.get("channels", s.period.channels).finish();
    });
    r.section("scale", [&](const json& p, const std::string& ctx) {
        StrictReader pr(p, ctx);
        pr.get("n_scales", s.scale.n_scales).get("channels", s.scale.channels).get("kernel", s.scale.kernel);
        pr.get("stride", s.scale.stride).finish();
    });
    r.section("stft", [&](const json& p, const std::string& ctx) {
        StrictReader pr(p, ctx);
        pr.get("n_ffts", s.stft.n_ffts).get("hops", s.stft.hops).get("windows", s.stft.windows);
        pr.get("filters", s.stft.filters).finish();
    });
    r.finish();
    return s;
}

namespace {

std::size_t group_count(std::size_t cin, std::size_t cout) {
    const std::size_t cap = std::max<std::size_t>(1, cin / 4);
    std::size_t g = std::gcd(cin, cout);
    while (g > cap) {
        std::size_t d = cap;
        while (g % d != 0) --d;
        g = d;
    }
    return g;
}

}  // namespace

template <typename T>
Var<T> period_view(const Var<T>& audio, std::size_t period) {
    if (audio.shape().size() != 1 || audio.size() == 0) {
        throw ShapeError("period view: expected nonempty audio [length], got " + shape_str(audio.shape()));
    }
    const std::size_t n = audio.size(), cols = (n + period - 1) / period;
    Var<T> x = cols * period == n ? audio : pad_reflect(audio, 0, cols * period - n);
    x = transpose(reshape(x, Shape{cols, period}));
    return reshape(x, Shape{1, period, cols});
}

template <typename T>
DiscriminatorBank<T>::DiscriminatorBank(const DiscriminatorBankSpec& spec) : spec_(spec) {
    spec_.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(spec_.seed), static_cast<std::uint32_t>(spec_.seed >> 32), 17u};
    Rng rng(seq);
    auto add_stack = [&](const std::string& prefix, const std::vector<LayerSpec>& specs) {
        for (std::size_t l = 0; l < specs.size(); ++l) {
            const std::string name = prefix + "/" + std::to_string(l);
            layers_.emplace(name, Layer<T>(specs[l], name, params_, rng));
        }
        depth_[prefix] = specs.size();
    };
    if (spec_.use_period) {
        const auto& p = spec_.period;
        const std::size_t pad = (p.kernel - 1) / 2;
        for (std::size_t i = 0; i < p.periods.size(); ++i) {
            std::vector<LayerSpec> s;
            std::size_t cin = 1;
            for (auto c : p.channels) {
                s.push_back(LayerSpec::conv2d(cin, c, 1, p.kernel, 1, p.stride, 0, pad));
                cin = c;
            }
            s.push_back(LayerSpec::conv2d(cin, cin, 1, p.kernel, 1, 1, 0, pad));
            s.push_back(LayerSpec::conv2d(cin, 1, 1, 3, 1, 1, 0, 1));
            add_stack("disc/period/" + std::to_string(i), s);
        }
    }
    if (spec_.use_scale) {
        const auto& c = spec_.scale.channels;
        for (std::size_t i = 0; i < spec_.scale.n_scales; ++i) {
            std::vector<LayerSpec> s;
            s.push_back(LayerSpec::conv1d(1, c[0], 15, 1, 7));
            for (std::size_t l = 1; l < c.size(); ++l) {
                s.push_back(LayerSpec::conv1d(c[l - 1], c[l], spec_.scale.kernel, spec_.scale.stride,
                                              (spec_.scale.kernel - 1) / 2, group_count(c[l - 1], c[l])));
            }
            s.push_back(LayerSpec::conv1d(c.back(), c.back(), 5, 1, 2));
            s.push_back(LayerSpec::conv1d(c.back(), 1, 3, 1, 1));
            add_stack("disc/scale/" + std::to_string(i), s);
        }
    }
    if (spec_.use_stft) {
        const std::size_t f = spec_.stft.filters;
        for (std::size_t i = 0; i < spec_.stft.n_ffts.size(); ++i) {
            std::vector<LayerSpec> s;
            s.push_back(LayerSpec::conv2d(1, f, 3, 9, 1, 1, 1, 4));
            for (std::size_t d : {1, 2, 4}) s.push_back(LayerSpec::conv2d(f, f, 3, 9, 1, 2, d, 4, d, 1));
            s.push_back(LayerSpec::conv2d(f, f, 3, 3, 1, 1, 1, 1));
            s.push_back(LayerSpec::conv2d(f, 1, 3, 3, 1, 1, 1, 1));
            add_stack("disc/stft/" + std::to_string(i), s);
        }
    }
}

template <typename T>
std::size_t DiscriminatorBank<T>::size() const {
    return depth_.size();
}

template <typename T>
std::vector<const Layer<T>*> DiscriminatorBank<T>::stack(const std::string& prefix) const {
    std::vector<const Layer<T>*> out;
    for (std::size_t l = 0; l < depth_.at(prefix); ++l) out.push_back(&layers_.at(prefix + "/" + std::to_string(l)));
    return out;
}

namespace {

template <typename T>
SubDiscriminatorOutput<T> run_stack(std::string name, const std::vector<const Layer<T>*>& layers, Var<T> x, T slope) {
    SubDiscriminatorOutput<T> out;
    out.name = std::move(name);
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
        x = leaky_relu(layers[l]->forward(x), slope);
        out.features.push_back(x);
    }
    x = layers.back()->forward(x);
    out.features.push_back(x);
    out.score = reshape(x, Shape{x.size()});
    return out;
}

}  // namespace

template <typename T>
SubDiscriminatorOutput<T> DiscriminatorBank<T>::run_period(std::size_t i, const Var<T>& audio) const {
    const std::string name = "disc/period/" + std::to_string(i);
    return run_stack(name, stack(name), period_view(audio, spec_.period.periods[i]), T(0.1));
}

template <typename T>
SubDiscriminatorOutput<T> DiscriminatorBank<T>::run_scale(std::size_t i, const Var<T>& audio) const {
    const std::string name = "disc/scale/" + std::to_string(i);
    Var<T> x = reshape(audio, Shape{1, audio.size()});
    for (std::size_t k = 0; k < i; ++k) x = avg_pool1d(x, 2, 2);
    return run_stack(name, stack(name), x, T(0.1));
}

template <typename T>
SubDiscriminatorOutput<T> DiscriminatorBank<T>::run_stft(std::size_t i, const Var<T>& audio) const {
    const std::string name = "disc/stft/" + std::to_string(i);
    Var<T> mag = stft_magnitude(audio, spec_.stft.windows[i], spec_.stft.hops[i]);
    Var<T> x = log(add_scalar(mag, T(1)));
    x = reshape(x, Shape{1, mag.shape()[0], mag.shape()[1]});
    return run_stack(name, stack(name), x, T(0.2));
}

template <typename T>
DiscriminatorOutput<T> DiscriminatorBank<T>::discriminate(const Var<T>& audio) const {
    if (audio.shape().size() != 1) throw ShapeError("discriminate: expected audio [length], got " + shape_str(audio.shape()));
    if (audio.size() < spec_.min_length()) {
        throw std::invalid_argument("discriminate: audio of " + std::to_string(audio.size()) +
                                    " samples is shorter than the minimum of " + std::to_string(spec_.min_length()));
    }
    DiscriminatorOutput<T> out;
    if (spec_.use_period) {
        for (std::size_t i = 0; i < spec_.period.periods.size(); ++i) out.push_back(run_period(i, audio));
    }
    if (spec_.use_scale) {
        for (std::size_t i = 0; i < spec_.scale.n_scales; ++i) out.push_back(run_scale(i, audio));
    }
    if (spec_.use_stft) {
        for (std::size_t i = 0; i < spec_.stft.n_ffts.size(); ++i) out.push_back(run_stft(i, audio));
    }
    return out;
}

template class DiscriminatorBank<float>;
template class DiscriminatorBank<double>;
template Var<float> period_view<float>(const Var<float>&, std::size_t);
template Var<double> period_view<double>(const Var<double>&, std::size_t);

}  // namespace vqd
