#include "vqd/corpus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vqd {

std::string to_string(SoundKind k) {
    switch (k) {
        case SoundKind::tone: return "tone";
        case SoundKind::am_tone: return "am_tone";
        case SoundKind::fm_tone: return "fm_tone";
        case SoundKind::noise: return "noise";
        case SoundKind::silence: return "silence";
    }
    return "unknown";
}

void SynthConfig::validate() const {
    if (!(duration > 0.0) || !std::isfinite(duration)) throw std::invalid_argument("synth: duration must be > 0");
    if (sample_rate < 1000) throw std::invalid_argument("synth: sample_rate must be >= 1000");
    if (duration * sample_rate < 256.0) throw std::invalid_argument("synth: clips must hold at least 256 samples");
}

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

class ClipRng {
public:
    ClipRng(std::uint64_t seed, std::size_t index)
        : engine_([&] {
              std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
              return std::mt19937_64(seq);
          }()) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    bool chance(double p) { return uniform(0.0, 1.0) < p; }
    std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

private:
    std::mt19937_64 engine_;
};

SoundKind pick_kind(ClipRng& rng) {
    const double u = rng.uniform(0.0, 1.0);
    if (u < 0.3) return SoundKind::tone;
    if (u < 0.5) return SoundKind::am_tone;
    if (u < 0.7) return SoundKind::fm_tone;
    return SoundKind::noise;
}

void render_tone(ClipRng& rng, double sr, float* out, std::size_t n) {
    const double f0 = rng.uniform(110.0, 0.3 * sr);
    const std::size_t partials = 1 + rng.below(3);
    const double amp = rng.uniform(0.2, 0.5);
    std::vector<double> phase(partials);
    for (auto& p : phase) p = rng.uniform(0.0, two_pi);
    for (std::size_t k = 1; k <= partials; ++k) {
        const double f = f0 * static_cast<double>(k);
        if (f >= 0.45 * sr) break;
        const double a = amp / static_cast<double>(k);
        for (std::size_t t = 0; t < n; ++t) {
            out[t] += static_cast<float>(a * std::sin(two_pi * f * static_cast<double>(t) / sr + phase[k - 1]));
        }
    }
}

void render_am(ClipRng& rng, double sr, float* out, std::size_t n) {
    const double fc = rng.uniform(200.0, 0.3 * sr);
    const double fm = rng.uniform(2.0, 12.0);
    const double depth = rng.uniform(0.5, 0.9);
    const double amp = rng.uniform(0.2, 0.45);
    for (std::size_t t = 0; t < n; ++t) {
        const double ts = static_cast<double>(t) / sr;
        out[t] += static_cast<float>(amp * (1.0 + depth * std::sin(two_pi * fm * ts)) / (1.0 + depth) *
                                     std::sin(two_pi * fc * ts));
    }
}

void render_fm(ClipRng& rng, double sr, float* out, std::size_t n) {
    const double fc = rng.uniform(300.0, 0.25 * sr);
    const double deviation = rng.uniform(50.0, std::min(400.0, 0.5 * fc));
    const double rate = rng.uniform(1.0, 8.0);
    const double amp = rng.uniform(0.2, 0.45);
    double phase = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double f = fc + deviation * std::sin(two_pi * rate * static_cast<double>(t) / sr);
        phase += two_pi * f / sr;
        out[t] += static_cast<float>(amp * std::sin(phase));
    }
}

// White noise through a band-pass biquad, scaled to a target RMS.
void render_noise(ClipRng& rng, double sr, float* out, std::size_t n) {
    const double fc = rng.uniform(500.0, 0.35 * sr);
    const double q = rng.uniform(0.5, 1.5);
    const double rms_target = rng.uniform(0.08, 0.2);
    const double w0 = two_pi * fc / sr;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    std::vector<double> y(n);
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double x = rng.normal();
        const double v = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = v;
        y[t] = v;
    }
    double energy = 0;
    for (double v : y) energy += v * v;
    const double gain = energy > 0 ? rms_target / std::sqrt(energy / static_cast<double>(n)) : 0.0;
    for (std::size_t t = 0; t < n; ++t) out[t] += static_cast<float>(gain * y[t]);
}

// Raised-cosine fade in and out over `ramp` samples.
void apply_fades(float* out, std::size_t n, std::size_t ramp) {
    ramp = std::min(ramp, n / 2);
    for (std::size_t t = 0; t < ramp; ++t) {
        const auto g = static_cast<float>(0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(t) / ramp));
        out[t] *= g;
        out[n - 1 - t] *= g;
    }
}

}  // namespace

SynthClip synth_clip(const SynthConfig& cfg, std::size_t index) {
    cfg.validate();
    ClipRng rng(cfg.seed, index);
    const double sr = cfg.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(cfg.duration * sr));
    SynthClip clip;
    char id[32];
    std::snprintf(id, sizeof id, "clip_%05zu", index);
    clip.id = id;
    clip.audio.sample_rate = cfg.sample_rate;
    clip.audio.samples.assign(n, 0.0f);

    std::size_t pos = 0;
    while (pos < n) {
        const std::size_t left = n - pos;
        if (rng.chance(0.4)) {
            const std::size_t gap = std::min(left, static_cast<std::size_t>(rng.uniform(0.05, 0.2) * sr));
            clip.events.push_back({SoundKind::silence, pos, gap});
            pos += gap;
            continue;
        }
        std::size_t len = static_cast<std::size_t>(rng.uniform(0.2, 0.6) * sr);
        // absorb a short remainder rather than leaving a sliver
        if (left < len + static_cast<std::size_t>(0.1 * sr)) len = left;
        const SoundKind kind = pick_kind(rng);
        float* out = clip.audio.samples.data() + pos;
        switch (kind) {
            case SoundKind::tone: render_tone(rng, sr, out, len); break;
            case SoundKind::am_tone: render_am(rng, sr, out, len); break;
            case SoundKind::fm_tone: render_fm(rng, sr, out, len); break;
            default: render_noise(rng, sr, out, len); break;
        }
        apply_fades(out, len, static_cast<std::size_t>(0.005 * sr));
        clip.events.push_back({kind, pos, len});
        pos += len;
    }
    for (auto& v : clip.audio.samples) v = std::clamp(v, -0.95f, 0.95f);
    return clip;
}

std::vector<SynthClip> synth_corpus(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<SynthClip> out;
    out.reserve(cfg.n_clips);
    for (std::size_t i = 0; i < cfg.n_clips; ++i) out.push_back(synth_clip(cfg, i));
    return out;
}

SoundKind classify_segment(const float* samples, std::size_t n) {
    if (n == 0) return SoundKind::silence;
    double energy = 0;
    for (std::size_t t = 0; t < n; ++t) energy += static_cast<double>(samples[t]) * samples[t];
    if (std::sqrt(energy / static_cast<double>(n)) < 1e-3) return SoundKind::silence;
    // Hann-windowed power spectrum by direct DFT
    const std::size_t bins = n / 2 + 1;
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        double re = 0, im = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const double w = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(t) / static_cast<double>(n));
            const double a = two_pi * static_cast<double>(k * t % n) / static_cast<double>(n);
            re += w * samples[t] * std::cos(a);
            im -= w * samples[t] * std::sin(a);
        }
        power[k] = re * re + im * im;
    }
    std::vector<double> sorted = power;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double total = 0, top = 0;
    for (double p : power) total += p;
    const std::size_t keep = std::min<std::size_t>(bins, std::max<std::size_t>(4, bins / 32));
    for (std::size_t k = 0; k < keep; ++k) top += sorted[k];
    return top >= 0.6 * total ? SoundKind::tone : SoundKind::noise;
}

nlohmann::json to_json(const ManifestEntry& e) {
    nlohmann::json j = e.extra;
    j["id"] = e.id;
    j["audio"] = e.audio;
    j["text"] = e.text;
    return j;
}

ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("manifest: each line must be a JSON object");
    ManifestEntry e;
    for (const char* key : {"id", "audio"}) {
        if (!j.contains(key) || !j.at(key).is_string()) {
            throw std::invalid_argument(std::string("manifest: missing string field '") + key + "'");
        }
    }
    e.id = j.at("id").get<std::string>();
    e.audio = j.at("audio").get<std::string>();
    if (j.contains("text")) {
        if (!j.at("text").is_string()) throw std::invalid_argument("manifest: 'text' must be a string");
        e.text = j.at("text").get<std::string>();
    }
    for (const auto& [k, v] : j.items()) {
        if (k != "id" && k != "audio" && k != "text") e.extra[k] = v;
    }
    return e;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(manifest_entry_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    for (const auto& e : entries) out << to_json(e).dump() << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<ManifestEntry> write_synth_corpus(const std::filesystem::path& out_dir, const SynthConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < cfg.n_clips; ++i) {
        const SynthClip clip = synth_clip(cfg, i);
        write_wav(out_dir / (clip.id + ".wav"), clip.audio);
        ManifestEntry e;
        e.id = clip.id;
        e.audio = clip.id + ".wav";
        std::string text;
        nlohmann::json events = nlohmann::json::array();
        for (const auto& ev : clip.events) {
            if (!text.empty()) text += ' ';
            text += to_string(ev.kind);
            events.push_back({{"kind", to_string(ev.kind)}, {"start", ev.start}, {"length", ev.length}});
        }
        e.text = text;
        e.extra["sample_rate"] = cfg.sample_rate;
        e.extra["samples"] = clip.audio.size();
        e.extra["events"] = std::move(events);
        entries.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.jsonl", entries);
    return entries;
}

std::vector<AudioBuffer> load_manifest_audio(const std::filesystem::path& manifest_path,
                                             const std::vector<ManifestEntry>& entries) {
    std::vector<AudioBuffer> out;
    out.reserve(entries.size());
    const auto base = manifest_path.parent_path();
    for (const auto& e : entries) {
        const std::filesystem::path p(e.audio);
        out.push_back(read_wav(p.is_absolute() ? p : base / p));
    }
    return out;
}

}  // namespace vqd
