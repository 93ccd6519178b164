#pragma once

#include <string>

#include "radioses/signal.hpp"

namespace radioses {

enum class WavFormat { pcm16, float32 };

/// Write mono WAV (RIFF little-endian). pcm16 clamps to [-1, 1] and scales by
/// 32767; float32 stores samples verbatim.
void write_wav(const std::string& path, const Waveform& w, WavFormat fmt);

/// Read mono WAV (PCM16 or IEEE float32). Throws on anything else.
Waveform read_wav(const std::string& path);

}  // namespace radioses
