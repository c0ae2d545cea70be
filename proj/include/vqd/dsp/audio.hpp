#pragma once

#include <filesystem>
#include <vector>

namespace vqd {

struct AudioBuffer {
    std::vector<float> samples;
    int sample_rate = 0;

    std::size_t size() const { return samples.size(); }
    double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
    /// Throws unless sample_rate > 0 and every sample is finite.
    void validate() const;
};

// 16-bit PCM mono WAV. Other encodings and channel counts are rejected.
AudioBuffer read_wav(const std::filesystem::path& path);
/// Samples are clipped to [-1, 1] and rounded to the nearest 16-bit level.
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace vqd
