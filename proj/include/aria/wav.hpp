#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "aria/error.hpp"

namespace aria {

/// Mono waveform, samples in [-1, 1].
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 0;

    int length() const { return static_cast<int>(samples.size()); }
    double seconds() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline std::int16_t float_to_pcm16(float x) {
    const float c = std::clamp(x, -1.0f, 1.0f);
    return static_cast<std::int16_t>(std::lrint(c * 32767.0f));
}

/// Write a 16-bit PCM mono WAV file.
inline void write_wav(const std::string& path, const AudioClip& clip) {
    const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
    const std::uint32_t data_bytes = n * 2;
    std::string buf;
    buf.reserve(44 + data_bytes);
    buf += "RIFF";
    detail::put_u32(buf, 36 + data_bytes);
    buf += "WAVEfmt ";
    detail::put_u32(buf, 16);
    detail::put_u16(buf, 1);  // PCM
    detail::put_u16(buf, 1);  // mono
    detail::put_u32(buf, static_cast<std::uint32_t>(clip.sample_rate));
    detail::put_u32(buf, static_cast<std::uint32_t>(clip.sample_rate) * 2);
    detail::put_u16(buf, 2);
    detail::put_u16(buf, 16);
    buf += "data";
    detail::put_u32(buf, data_bytes);
    for (std::uint32_t i = 0; i < n; ++i) {
        detail::put_u16(buf, static_cast<std::uint16_t>(float_to_pcm16(clip.samples[i])));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw Error("write failed: " + path);
}

/// Read a 16-bit PCM mono WAV file.
inline AudioClip read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw ParseError("not a RIFF/WAVE file: " + path);

    AudioClip clip;
    std::size_t pos = 12;
    bool have_fmt = false;
    int channels = 0;
    while (pos + 8 <= buf.size()) {
        const std::string id(reinterpret_cast<const char*>(buf.data() + pos), 4);
        const std::uint32_t size = detail::get_u32(buf.data() + pos + 4);
        pos += 8;
        if (pos + size > buf.size()) throw ParseError("truncated chunk in " + path);
        if (id == "fmt ") {
            if (size < 16) throw ParseError("bad fmt chunk in " + path);
            const std::uint16_t format = detail::get_u16(buf.data() + pos);
            channels = detail::get_u16(buf.data() + pos + 2);
            clip.sample_rate = static_cast<int>(detail::get_u32(buf.data() + pos + 4));
            const std::uint16_t bits = detail::get_u16(buf.data() + pos + 14);
            if (format != 1 || bits != 16) throw ParseError("expected 16-bit PCM: " + path);
            if (channels != 1) throw ParseError("expected mono: " + path);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw ParseError("data chunk before fmt in " + path);
            const std::size_t n = size / 2;
            clip.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::int16_t v = static_cast<std::int16_t>(detail::get_u16(buf.data() + pos + 2 * i));
                clip.samples[i] = std::max(static_cast<float>(v) / 32767.0f, -1.0f);
            }
            return clip;
        }
        pos += size + (size & 1u);
    }
    throw ParseError("no data chunk in " + path);
}

}  // namespace aria
