#include "vqd/dsp/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace vqd {

void AudioBuffer::validate() const {
    if (sample_rate <= 0) {
        throw std::invalid_argument("audio sample rate must be positive, got " + std::to_string(sample_rate));
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples[i])) {
            throw std::invalid_argument("audio sample " + std::to_string(i) + " is not finite");
        }
    }
}

namespace {

std::uint32_t u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24); }
std::uint16_t u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open wav '" + path.string() + "'");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& why) { return std::runtime_error("wav '" + path.string() + "': " + why); };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw fail("not a RIFF/WAVE file");
    }
    AudioBuffer audio;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t len = u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + len > bytes.size()) {
            throw fail("truncated chunk");
        }
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) throw fail("short fmt chunk");
            const unsigned char* f = bytes.data() + body;
            const std::uint16_t format = u16(f), channels = u16(f + 2), bits = u16(f + 14);
            if (format != 1 || bits != 16) throw fail("only 16-bit PCM is supported");
            if (channels != 1) throw fail("only mono is supported, got " + std::to_string(channels) + " channels");
            audio.sample_rate = static_cast<int>(u32(f + 4));
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) throw fail("data chunk before fmt chunk");
            const std::size_t n = len / 2;
            audio.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto v = static_cast<std::int16_t>(u16(bytes.data() + body + 2 * i));
                audio.samples[i] = static_cast<float>(v) / 32768.0f;
            }
            return audio;
        }
        pos = body + len + (len & 1);
    }
    throw fail("no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
    audio.validate();
    const auto n = static_cast<std::uint32_t>(audio.samples.size());
    std::string s;
    s.reserve(44 + 2 * n);
    s += "RIFF";
    put32(s, 36 + 2 * n);
    s += "WAVEfmt ";
    put32(s, 16);
    put16(s, 1);
    put16(s, 1);
    put32(s, static_cast<std::uint32_t>(audio.sample_rate));
    put32(s, static_cast<std::uint32_t>(audio.sample_rate) * 2);
    put16(s, 2);
    put16(s, 16);
    s += "data";
    put32(s, 2 * n);
    for (float x : audio.samples) {
        const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
        const long v = std::lround(c * 32768.0);
        put16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(v, -32768L, 32767L))));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out) {
        throw std::runtime_error("failed writing wav '" + path.string() + "'");
    }
}

}  // namespace vqd
