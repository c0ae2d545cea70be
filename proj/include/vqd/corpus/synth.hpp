#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/dsp/audio.hpp"

namespace vqd {

enum class SoundKind { tone, am_tone, fm_tone, noise, silence };

std::string to_string(SoundKind k);

struct SynthConfig {
    std::size_t n_clips = 50;
    double duration = 1.0;  // seconds
    int sample_rate = 8000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthEvent {
    SoundKind kind = SoundKind::silence;
    std::size_t start = 0, length = 0;  // samples
};

struct SynthClip {
    std::string id;
    AudioBuffer audio;
    std::vector<SynthEvent> events;
};

/// Clip i depends only on (seed, i), so corpora of different sizes share prefixes.
SynthClip synth_clip(const SynthConfig& cfg, std::size_t index);
std::vector<SynthClip> synth_corpus(const SynthConfig& cfg);

/// Coarse spectral class of a stretch of audio from its band energies:
/// silence by RMS, otherwise tone when a few bins hold most of the energy.
SoundKind classify_segment(const float* samples, std::size_t n);

// One line of a manifest file. Unknown fields are kept in `extra`.
struct ManifestEntry {
    std::string id;
    std::string audio;
    std::string text;
    nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Writes <id>.wav files and manifest.jsonl under out_dir; returns the manifest entries.
std::vector<ManifestEntry> write_synth_corpus(const std::filesystem::path& out_dir, const SynthConfig& cfg);

/// Resolves each entry's audio path against the manifest's directory and reads it.
std::vector<AudioBuffer> load_manifest_audio(const std::filesystem::path& manifest_path,
                                             const std::vector<ManifestEntry>& entries);

}  // namespace vqd
