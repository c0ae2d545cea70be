#include "vqd/dsp/mel.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>

#include "vqd/numerics/ops.hpp"

namespace vqd {

void MelConfig::validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("mel config: sample_rate must be positive");
    if (n_mels == 0) throw std::invalid_argument("mel config: n_mels must be >= 1");
    if (window < 2) throw std::invalid_argument("mel config: window must be >= 2");
    if (hop == 0 || hop > window) throw std::invalid_argument("mel config: hop must be in [1, window]");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
        throw std::invalid_argument("mel config: need 0 <= fmin < fmax <= sample_rate / 2, got fmin " +
                                    std::to_string(fmin) + ", fmax " + std::to_string(fmax));
    }
}

MelConfig MelConfig::desk() {
    MelConfig c;
    c.sample_rate = 8000;
    c.n_mels = 32;
    c.hop = 64;
    c.window = 256;
    c.fmin = 0.0;
    c.fmax = 4000.0;
    c.segment = 8000;
    return c;
}

std::vector<MelScale> default_mel_scales() { return {{512, 128}, {1024, 256}, {2048, 512}}; }
std::vector<MelScale> desk_mel_scales() { return {{128, 32}, {256, 64}, {512, 128}}; }

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

FramePadding frame_padding(std::size_t length, std::size_t window, std::size_t hop) {
    if (length == 0) throw std::invalid_argument("spectral transform of empty audio");
    if (hop == 0 || hop > window) throw std::invalid_argument("hop must be in [1, window]");
    FramePadding p;
    p.frames = (length + hop - 1) / hop;
    p.left = (window - hop) / 2;
    p.right = window + (p.frames - 1) * hop - p.left - length;
    return p;
}

namespace {

// Index of the reflect-padded signal, folding back and forth across [0, n).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

// Hann-windowed DFT basis [window, 2 * bins]: cosine columns then sine columns.
template <typename T>
Var<T> dft_basis(std::size_t window) {
    thread_local std::map<std::size_t, Var<T>> cache;
    auto it = cache.find(window);
    if (it != cache.end()) return it->second;
    const std::size_t bins = window / 2 + 1;
    const auto w = hann_window(window);
    Tensor<T> basis(Shape{window, 2 * bins});
    for (std::size_t n = 0; n < window; ++n) {
        for (std::size_t k = 0; k < bins; ++k) {
            // reduce n*k mod window first so the phase stays exact for large transforms
            const double phase = 2.0 * std::numbers::pi * static_cast<double>((n * k) % window) / window;
            basis.at2(n, k) = static_cast<T>(w[n] * std::cos(phase));
            basis.at2(n, bins + k) = static_cast<T>(-w[n] * std::sin(phase));
        }
    }
    return cache.emplace(window, Var<T>::constant(std::move(basis))).first->second;
}

// Transposed filterbank [bins, n_mels] as a cached constant.
template <typename T>
Var<T> filterbank_t(int sample_rate, std::size_t window, std::size_t n_mels, double fmin, double fmax) {
    using Key = std::tuple<int, std::size_t, std::size_t, double, double>;
    thread_local std::map<Key, Var<T>> cache;
    const Key key{sample_rate, window, n_mels, fmin, fmax};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const std::size_t bins = window / 2 + 1;
    const auto fb = mel_filterbank(sample_rate, window, n_mels, fmin, fmax);
    Tensor<T> t(Shape{bins, n_mels});
    for (std::size_t m = 0; m < n_mels; ++m) {
        for (std::size_t k = 0; k < bins; ++k) t.at2(k, m) = static_cast<T>(fb[m * bins + k]);
    }
    return cache.emplace(key, Var<T>::constant(std::move(t))).first->second;
}

// [length] -> (re, im) each [frames, bins]
template <typename T>
std::pair<Var<T>, Var<T>> stft_parts(const Var<T>& audio, std::size_t window, std::size_t hop) {
    if (audio.shape().size() != 1) {
        throw ShapeError("spectral transform expects audio of shape [length], got " + shape_str(audio.shape()));
    }
    const FramePadding p = frame_padding(audio.size(), window, hop);
    Var<T> frames = frame(pad_reflect(audio, p.left, p.right), window, hop);
    Var<T> spec = matmul(frames, dft_basis<T>(window));
    const std::size_t bins = window / 2 + 1;
    return {slice(spec, 1, 0, bins), slice(spec, 1, bins, bins)};
}

template <typename T>
Var<T> power_spectrum(const Var<T>& audio, std::size_t window, std::size_t hop) {
    auto [re, im] = stft_parts(audio, window, hop);
    return add(mul(re, re), mul(im, im));
}

}  // namespace

Spectrogram stft(const AudioBuffer& audio, const MelConfig& cfg) {
    cfg.validate();
    if (audio.samples.empty()) throw std::invalid_argument("stft: audio length must be >= 1");
    const std::size_t n = audio.samples.size(), win = cfg.window;
    const FramePadding p = frame_padding(n, win, cfg.hop);
    if (p.left + n + p.right < win) throw std::invalid_argument("stft: window exceeds padded signal length");
    const auto w = hann_window(win);
    Spectrogram s;
    s.frames = p.frames;
    s.bins = cfg.bins();
    s.values.resize(s.frames * s.bins);
    std::vector<double> buf(win);
    for (std::size_t f = 0; f < s.frames; ++f) {
        for (std::size_t j = 0; j < win; ++j) {
            const auto idx = static_cast<std::ptrdiff_t>(f * cfg.hop + j) - static_cast<std::ptrdiff_t>(p.left);
            buf[j] = w[j] * audio.samples[reflect_index(idx, n)];
        }
        for (std::size_t k = 0; k < s.bins; ++k) {
            double re = 0, im = 0;
            for (std::size_t j = 0; j < win; ++j) {
                const double phase = 2.0 * std::numbers::pi * static_cast<double>((j * k) % win) / win;
                re += buf[j] * std::cos(phase);
                im -= buf[j] * std::sin(phase);
            }
            s.values[f * s.bins + k] = {re, im};
        }
    }
    return s;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int sample_rate, std::size_t window, std::size_t n_mels, double fmin, double fmax) {
    const std::size_t bins = window / 2 + 1;
    const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    }
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(window);
    std::vector<double> fb(n_mels * bins, 0.0);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
        double total = 0.0;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * bin_hz;
            double v = 0.0;
            if (f > left && f <= centre) {
                v = (f - left) / (centre - left);
            } else if (f > centre && f < right) {
                v = (right - f) / (right - centre);
            }
            fb[m * bins + k] = v;
            total += v;
        }
        if (total <= 0.0) {
            const auto k = static_cast<std::size_t>(std::lround(centre / bin_hz));
            fb[m * bins + std::min(k, bins - 1)] = 1.0;
            continue;
        }
        for (std::size_t k = 0; k < bins; ++k) fb[m * bins + k] /= total;
    }
    return fb;
}

template <typename T>
Var<T> log_mel(const Var<T>& audio, const MelConfig& cfg) {
    cfg.validate();
    Var<T> power = power_spectrum(audio, cfg.window, cfg.hop);
    Var<T> mel = matmul(power, filterbank_t<T>(cfg.sample_rate, cfg.window, cfg.n_mels, cfg.fmin, cfg.fmax));
    return log(max_const(mel, T(1e-5)));
}

Tensor<float> mel_spectrogram(const AudioBuffer& audio, const MelConfig& cfg) {
    audio.validate();
    if (audio.sample_rate != cfg.sample_rate) {
        throw std::invalid_argument("audio sample rate " + std::to_string(audio.sample_rate) +
                                    " does not match mel config rate " + std::to_string(cfg.sample_rate));
    }
    auto x = Var<float>::constant(Tensor<float>(Shape{audio.samples.size()}, audio.samples));
    return log_mel(x, cfg).value();
}

template <typename T>
Var<T> stft_magnitude(const Var<T>& audio, std::size_t window, std::size_t hop, T floor) {
    return sqrt(add_scalar(power_spectrum(audio, window, hop), floor));
}

template <typename T>
Var<T> multi_scale_mel_loss(const Var<T>& y, const Var<T>& y_hat, const MelConfig& cfg,
                            const std::vector<MelScale>& scales) {
    if (y.shape() != y_hat.shape()) {
        throw ShapeError("multi_scale_mel_loss: length mismatch " + shape_str(y.shape()) + " vs " +
                         shape_str(y_hat.shape()));
    }
    if (scales.empty()) throw std::invalid_argument("multi_scale_mel_loss: no scales given");
    Var<T> total;
    for (const auto& s : scales) {
        MelConfig c = cfg;
        c.window = s.window;
        c.hop = s.hop;
        Var<T> term = l1_mean(log_mel(y_hat, c), log_mel(y, c));
        total = total.valid() ? add(total, term) : term;
    }
    return scale(total, T(1) / static_cast<T>(scales.size()));
}

double silence_proportion(const std::vector<float>& samples, std::size_t frame_len, std::size_t frame_hop,
                          double rms_threshold) {
    if (frame_len == 0 || frame_hop == 0) throw std::invalid_argument("silence_proportion: frame length and hop must be >= 1");
    if (samples.empty()) return 1.0;
    const std::size_t n = samples.size();
    const std::size_t frames = n <= frame_len ? 1 : (n - frame_len) / frame_hop + 1;
    std::size_t silent = 0;
    for (std::size_t f = 0; f < frames; ++f) {
        const std::size_t begin = f * frame_hop, end = std::min(n, begin + frame_len);
        double energy = 0.0;
        for (std::size_t i = begin; i < end; ++i) energy += static_cast<double>(samples[i]) * samples[i];
        if (std::sqrt(energy / static_cast<double>(end - begin)) < rms_threshold) ++silent;
    }
    return static_cast<double>(silent) / static_cast<double>(frames);
}

double silence_proportion(const AudioBuffer& audio, const SilenceConfig& cfg) {
    if (audio.sample_rate <= 0) throw std::invalid_argument("silence_proportion: sample rate must be positive");
    const auto len = static_cast<std::size_t>(std::max(1.0, std::round(cfg.frame_seconds * audio.sample_rate)));
    const auto hop = static_cast<std::size_t>(std::max(1.0, std::round(cfg.hop_seconds * audio.sample_rate)));
    return silence_proportion(audio.samples, len, hop, cfg.rms_threshold);
}

#define VQD_INSTANTIATE(T)                                                                                \
    template Var<T> log_mel<T>(const Var<T>&, const MelConfig&);                                          \
    template Var<T> stft_magnitude<T>(const Var<T>&, std::size_t, std::size_t, T);                        \
    template Var<T> multi_scale_mel_loss<T>(const Var<T>&, const Var<T>&, const MelConfig&,               \
                                            const std::vector<MelScale>&);

VQD_INSTANTIATE(float)
VQD_INSTANTIATE(double)

#undef VQD_INSTANTIATE

}  // namespace vqd
