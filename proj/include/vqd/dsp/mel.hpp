#pragma once

#include <complex>
#include <vector>

#include "vqd/dsp/audio.hpp"
#include "vqd/numerics/autodiff.hpp"

namespace vqd {

struct MelConfig {
    int sample_rate = 24000;
    std::size_t n_mels = 128;
    std::size_t hop = 256;
    std::size_t window = 1024;
    double fmin = 0.0;
    double fmax = 12000.0;
    std::size_t segment = 72000;

    void validate() const;
    std::size_t bins() const { return window / 2 + 1; }
    std::size_t frames(std::size_t length) const { return (length + hop - 1) / hop; }

    /// 8 kHz, 32 mels, hop 64, window 256, fmax 4 kHz, one-second segments.
    static MelConfig desk();
};

struct MelScale {
    std::size_t window = 1024;
    std::size_t hop = 256;
};

/// Windows {512, 1024, 2048}, hop = window / 4.
std::vector<MelScale> default_mel_scales();
/// Windows {128, 256, 512}, hop = window / 4.
std::vector<MelScale> desk_mel_scales();

struct Spectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0;
    std::vector<std::complex<double>> values;  // row-major [frames, bins]

    std::complex<double> at(std::size_t f, std::size_t k) const { return values[f * bins + k]; }
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Left/right reflect padding used by every spectral transform: the signal is
/// centred so that frame i covers samples around i * hop and the frame count
/// is ceil(length / hop).
struct FramePadding {
    std::size_t left = 0;
    std::size_t right = 0;
    std::size_t frames = 0;
};
FramePadding frame_padding(std::size_t length, std::size_t window, std::size_t hop);

Spectrogram stft(const AudioBuffer& audio, const MelConfig& cfg);

/// Triangular filters on the 2595 * log10(1 + f / 700) scale, [n_mels, window / 2 + 1],
/// each row scaled to sum to 1 so a flat spectrum maps to flat mel energies.
/// A filter narrower than one bin becomes a unit weight on the bin nearest its centre.
std::vector<double> mel_filterbank(int sample_rate, std::size_t window, std::size_t n_mels, double fmin, double fmax);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Differentiable log(max(mel power, 1e-5)) of audio [length] -> [frames, n_mels].
template <typename T>
Var<T> log_mel(const Var<T>& audio, const MelConfig& cfg);

/// Convenience wrapper on an AudioBuffer; rejects a sample-rate mismatch.
Tensor<float> mel_spectrogram(const AudioBuffer& audio, const MelConfig& cfg);

/// |STFT| of audio [length] -> [frames, window / 2 + 1], differentiable.
/// `floor` is added to the power before the square root.
template <typename T>
Var<T> stft_magnitude(const Var<T>& audio, std::size_t window, std::size_t hop, T floor = T(1e-9));

/// Mean over scales of the L1 distance between log-mel spectrograms of
/// y and y_hat, each computed with that scale's window and hop.
template <typename T>
Var<T> multi_scale_mel_loss(const Var<T>& y, const Var<T>& y_hat, const MelConfig& cfg,
                            const std::vector<MelScale>& scales);

struct SilenceConfig {
    double frame_seconds = 0.025;
    double hop_seconds = 0.010;
    double rms_threshold = 1e-3;
};

/// Fraction of frames whose RMS is below the threshold. Audio shorter than a
/// frame is one frame; empty audio is fully silent.
double silence_proportion(const std::vector<float>& samples, std::size_t frame_len, std::size_t frame_hop,
                          double rms_threshold);
double silence_proportion(const AudioBuffer& audio, const SilenceConfig& cfg = {});

}  // namespace vqd
