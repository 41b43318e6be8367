#include "enviro/wav.hpp"

#include "enviro/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace enviro::wav {

namespace {

// All multi-byte fields in RIFF/WAVE are little-endian; so is every platform
// this builds on, but read/write through memcpy keeps the layout explicit.

uint32_t read_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t read_u16(const unsigned char* p) {
    return static_cast<uint16_t>(static_cast<uint16_t>(p[0]) | static_cast<uint16_t>(p[1]) << 8);
}

void push_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void push_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

void push_tag(std::vector<unsigned char>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) throw IoError("read failed for " + path);
    return data;
}

void write_file(const std::string& path, const std::vector<unsigned char>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out.good()) throw IoError("write failed for " + path);
}

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;

void write_wav(const std::string& path, const dsp::Waveform& wave, uint16_t format) {
    if (wave.sample_rate < 1) throw IoError("waveform has no sample rate");
    const uint16_t bytes_per_sample = format == kFormatPcm ? 2 : 4;
    const uint32_t data_bytes = static_cast<uint32_t>(wave.samples.size()) * bytes_per_sample;

    std::vector<unsigned char> out;
    out.reserve(44 + data_bytes);
    push_tag(out, "RIFF");
    push_u32(out, 36 + data_bytes);
    push_tag(out, "WAVE");
    push_tag(out, "fmt ");
    push_u32(out, 16);
    push_u16(out, format);
    push_u16(out, 1);  // mono
    push_u32(out, static_cast<uint32_t>(wave.sample_rate));
    push_u32(out, static_cast<uint32_t>(wave.sample_rate) * bytes_per_sample);
    push_u16(out, bytes_per_sample);
    push_u16(out, static_cast<uint16_t>(bytes_per_sample * 8));
    push_tag(out, "data");
    push_u32(out, data_bytes);

    if (format == kFormatPcm) {
        for (double s : wave.samples) {
            const double clamped = std::clamp(s, -1.0, 1.0);
            const auto q = static_cast<int16_t>(std::lround(clamped * 32767.0));
            push_u16(out, static_cast<uint16_t>(q));
        }
    } else {
        for (double s : wave.samples) {
            const float f = static_cast<float>(s);
            uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            push_u32(out, bits);
        }
    }
    write_file(path, out);
}

}  // namespace

dsp::Waveform read(const std::string& path) {
    const std::vector<unsigned char> data = read_file(path);
    if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
        std::memcmp(data.data() + 8, "WAVE", 4) != 0)
        throw IoError(path + " is not a RIFF/WAVE file");

    uint16_t format = 0;
    uint16_t channels = 0;
    uint16_t bits = 0;
    uint32_t sample_rate = 0;
    bool have_fmt = false;
    std::size_t data_off = 0;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= data.size()) {
        const unsigned char* hdr = data.data() + pos;
        const uint32_t chunk_len = read_u32(hdr + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_len > data.size())
            throw IoError(path + ": chunk overruns file");
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw IoError(path + ": fmt chunk too short");
            format = read_u16(data.data() + body);
            channels = read_u16(data.data() + body + 2);
            sample_rate = read_u32(data.data() + body + 4);
            bits = read_u16(data.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data_off = body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (!have_fmt) throw IoError(path + ": missing fmt chunk");
    if (data_off == 0 && data_len == 0) throw IoError(path + ": missing data chunk");
    if (channels != 1)
        throw IoError(path + ": expected mono, got " + std::to_string(channels) + " channels");

    dsp::Waveform wave;
    wave.sample_rate = static_cast<int>(sample_rate);
    if (format == kFormatPcm && bits == 16) {
        const std::size_t n = data_len / 2;
        wave.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = read_u16(data.data() + data_off + 2 * i);
            wave.samples[i] = static_cast<int16_t>(u) / 32767.0;
        }
    } else if (format == kFormatFloat && bits == 32) {
        const std::size_t n = data_len / 4;
        wave.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const uint32_t raw = read_u32(data.data() + data_off + 4 * i);
            float f = 0.0f;
            std::memcpy(&f, &raw, 4);
            wave.samples[i] = static_cast<double>(f);
        }
    } else {
        throw IoError(path + ": unsupported encoding (format " + std::to_string(format) +
                      ", " + std::to_string(bits) + " bits)");
    }
    return wave;
}

void write_pcm16(const std::string& path, const dsp::Waveform& wave) {
    write_wav(path, wave, kFormatPcm);
}

void write_float32(const std::string& path, const dsp::Waveform& wave) {
    write_wav(path, wave, kFormatFloat);
}

}  // namespace enviro::wav
