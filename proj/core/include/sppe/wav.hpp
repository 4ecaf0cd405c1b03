#pragma once

#include <filesystem>
#include <vector>

namespace sppe {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1)
  int sample_rate = 16000;
};

// Ingestion contract: RIFF/WAVE, PCM 16-bit little-endian, mono, 16000 Hz.
// Anything else raises DataError naming the offending field.
AudioClip read_wav(const std::filesystem::path& path);

// Writes PCM 16-bit mono; samples are clamped to [-1, 1) before quantizing.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace sppe
