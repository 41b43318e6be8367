#pragma once

#include "enviro/dsp.hpp"

#include <string>

namespace enviro::wav {

// Reads a mono RIFF/WAVE file. Accepts 16-bit PCM and 32-bit IEEE float;
// anything else (including multi-channel data) throws IoError.
dsp::Waveform read(const std::string& path);

// Writes 16-bit PCM. Samples are clamped to [-1, 1] before quantization.
void write_pcm16(const std::string& path, const dsp::Waveform& wave);

// Writes 32-bit IEEE float without clamping.
void write_float32(const std::string& path, const dsp::Waveform& wave);

}  // namespace enviro::wav
