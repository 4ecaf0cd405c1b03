#include "sppe/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "sppe/errors.hpp"

namespace sppe {

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("wav: cannot open " + path.string());

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) {
    throw DataError("wav: " + path.string() + ": missing RIFF magic");
  }
  read_u32(in);  // total size, unchecked
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) {
    throw DataError("wav: " + path.string() + ": missing WAVE form type");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<std::int16_t> pcm;

  while (in.read(tag, 4)) {
    const std::uint32_t chunk_size = read_u32(in);
    if (!in) break;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16) {
        throw DataError("wav: " + path.string() + ": fmt chunk too short");
      }
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      in.ignore(chunk_size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) {
        throw DataError("wav: " + path.string() + ": data chunk before fmt");
      }
      pcm.resize(chunk_size / 2);
      for (auto& s : pcm) {
        s = static_cast<std::int16_t>(read_u16(in));
      }
      if (!in) throw DataError("wav: " + path.string() + ": truncated data chunk");
      if (chunk_size % 2 != 0) in.ignore(1);  // pad byte
    } else {
      in.ignore(chunk_size + (chunk_size % 2));  // skip unknown chunk + pad
    }
  }

  if (!have_fmt) throw DataError("wav: " + path.string() + ": no fmt chunk");
  if (format != 1) {
    throw DataError("wav: " + path.string() + ": format tag " +
                    std::to_string(format) + " != 1 (PCM)");
  }
  if (channels != 1) {
    throw DataError("wav: " + path.string() + ": channels " +
                    std::to_string(channels) + " != 1 (mono)");
  }
  if (rate != 16000) {
    throw DataError("wav: " + path.string() + ": sample_rate " +
                    std::to_string(rate) + " != 16000");
  }
  if (bits != 16) {
    throw DataError("wav: " + path.string() + ": bits_per_sample " +
                    std::to_string(bits) + " != 16");
  }
  if (pcm.empty()) throw DataError("wav: " + path.string() + ": no data chunk");

  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    clip.samples[i] = static_cast<double>(pcm[i]) / 32768.0;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("wav: cannot write " + path.string());

  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  write_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  write_u16(out, 2);   // block align
  write_u16(out, 16);  // bits
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (const double s : clip.samples) {
    const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    const auto q = static_cast<std::int16_t>(std::lrint(clamped * 32768.0));
    write_u16(out, static_cast<std::uint16_t>(q));
  }
}

}  // namespace sppe
