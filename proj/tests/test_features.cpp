#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>

#include "sppe/errors.hpp"
#include "sppe/features.hpp"
#include "sppe/rng.hpp"
#include "sppe/wav.hpp"

using namespace sppe;

namespace {

// Feeds exact scripted values so specific mask branches can be forced.
struct ScriptedRng {
  std::deque<double> uniforms;
  std::deque<int> ints;

  double uniform() {
    REQUIRE_FALSE(uniforms.empty());
    const double v = uniforms.front();
    uniforms.pop_front();
    return v;
  }
  int uniform_int(int lo, int hi) {
    REQUIRE_FALSE(ints.empty());
    const int v = ints.front();
    ints.pop_front();
    REQUIRE(v >= lo);
    REQUIRE(v <= hi);
    return v;
  }
};

AudioClip sine_clip(double hz, std::size_t samples, double amp = 0.5) {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(samples);
  for (std::size_t n = 0; n < samples; ++n) {
    clip.samples[n] = amp * std::sin(2.0 * M_PI * hz * static_cast<double>(n) / 16000.0);
  }
  return clip;
}

}  // namespace

TEST_CASE("stft frame count and shape for a 10 s clip") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(160000, 0.0);
  const Stft stft;
  const Spectrogram spec = stft.power(clip);
  CHECK(spec.bins == 201);
  CHECK(spec.frames == 998);  // floor((160000 - 400) / 160) + 1
  CHECK(spec.domain == SpecDomain::LinearPower);
}

TEST_CASE("stft of a pure 1 kHz sine peaks at bin 25") {
  const Stft stft;
  const Spectrogram spec = stft.power(sine_clip(1000.0, 8000));
  for (std::size_t t = 0; t < spec.frames; ++t) {
    std::size_t argmax = 0;
    for (std::size_t b = 1; b < spec.bins; ++b) {
      if (spec.at(b, t) > spec.at(argmax, t)) argmax = b;
    }
    CHECK(argmax == 25);  // round(1000 * 400 / 16000)
  }
}

TEST_CASE("stft of silence is identically zero") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(1200, 0.0);
  const Spectrogram spec = Stft().power(clip);
  for (const double v : spec.values) CHECK(v == 0.0);
}

TEST_CASE("stft rejects clips shorter than one window") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(399, 0.0);
  CHECK_THROWS_AS(Stft().power(clip), DataError);
}

TEST_CASE("stft frame count formula holds for random lengths") {
  Rng rng(5);
  const Stft stft;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t len = 400 + rng.uniform_below(4000);
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(len, 0.0);
    for (double& s : clip.samples) s = rng.normal() * 0.1;
    CHECK(stft.power(clip).frames == (len - 400) / 160 + 1);
  }
}

TEST_CASE("specaugment skip branch is the identity") {
  Spectrogram spec(201, 120, SpecDomain::LinearPower);
  Rng fill(9);
  for (double& v : spec.values) v = 1.0 + fill.uniform();
  SpecAugmentPolicy policy;
  ScriptedRng rng;
  rng.uniforms = {0.9};  // >= apply_rate 0.5
  const Spectrogram out = specaugment(spec, policy, rng);
  CHECK(out.values == spec.values);
}

TEST_CASE("specaugment forced single time mask of width 100 at frame 0") {
  Spectrogram spec(201, 150, SpecDomain::LinearPower);
  for (double& v : spec.values) v = 2.0;
  SpecAugmentPolicy policy;
  ScriptedRng rng;
  rng.uniforms = {0.0};          // apply
  rng.ints = {1, 100, 0, 0};     // k_t=1, width=100, start=0, k_f=0
  const Spectrogram out = specaugment(spec, policy, rng);
  for (std::size_t b = 0; b < out.bins; ++b) {
    for (std::size_t f = 0; f < out.frames; ++f) {
      if (f < 100) {
        CHECK(out.at(b, f) == 0.0);
      } else {
        CHECK(out.at(b, f) == 2.0);
      }
    }
  }
}

TEST_CASE("specaugment masked cell count respects the policy bound") {
  SpecAugmentPolicy policy;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Spectrogram spec(201, 130, SpecDomain::LinearPower);
    for (double& v : spec.values) v = 1.0;  // strictly positive
    Rng rng(seed);
    const Spectrogram out = specaugment(spec, policy, rng);
    std::size_t zeros = 0;
    for (const double v : out.values) zeros += v == 0.0;
    CHECK(zeros <= 2 * 64 * spec.frames + 2 * 100 * spec.bins);
  }
}

TEST_CASE("specaugment refuses non-linear domains") {
  Spectrogram spec(64, 100, SpecDomain::LogMel);
  Rng rng(1);
  SpecAugmentPolicy policy;
  CHECK_THROWS_WITH_AS(specaugment(spec, policy, rng),
                       doctest::Contains("linear-power"), std::invalid_argument);
}

TEST_CASE("specaugment with apply_rate 0 is the identity for any seed") {
  SpecAugmentPolicy policy;
  policy.apply_rate = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Spectrogram spec(201, 80, SpecDomain::LinearPower);
    Rng fill(seed + 100);
    for (double& v : spec.values) v = fill.uniform();
    Rng rng(seed);
    CHECK(specaugment(spec, policy, rng).values == spec.values);
  }
}

TEST_CASE("mel filterbank geometry") {
  const MelFilterbank mel;
  CHECK(mel.n_mels() == 64);
  CHECK(mel.n_bins() == 201);
  for (std::size_t m = 0; m < 64; ++m) {
    double row_sum = 0.0;
    for (std::size_t b = 0; b < 201; ++b) row_sum += mel.weight(m, b);
    CHECK(row_sum > 0.0);
  }
  // HTK scale endpoints
  CHECK(MelFilterbank::hz_to_mel(0.0) == 0.0);
  CHECK(MelFilterbank::hz_to_mel(700.0) ==
        doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(MelFilterbank::mel_to_hz(MelFilterbank::hz_to_mel(3456.0)) ==
        doctest::Approx(3456.0));
}

TEST_CASE("mel_log of silence is the log epsilon floor") {
  Spectrogram spec(201, 7, SpecDomain::LinearPower);
  const Spectrogram out = MelFilterbank().apply_log(spec);
  CHECK(out.bins == 64);
  CHECK(out.frames == 7);
  CHECK(out.domain == SpecDomain::LogMel);
  for (const double v : out.values) CHECK(v == doctest::Approx(std::log(1e-6)));
}

TEST_CASE("mel_log argmax row is non-decreasing for a rising tone sweep") {
  const std::size_t frames = 50;
  Spectrogram spec(201, frames, SpecDomain::LinearPower);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t hot = 1 + t * 199 / (frames - 1);
    spec.at(hot, t) = 100.0;
  }
  const Spectrogram out = MelFilterbank().apply_log(spec);
  std::size_t prev = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t argmax = 0;
    for (std::size_t m = 1; m < out.bins; ++m) {
      if (out.at(m, t) > out.at(argmax, t)) argmax = m;
    }
    CHECK(argmax >= prev);
    prev = argmax;
  }
}

TEST_CASE("scale_minmax endpoints, midpoint and clamping") {
  Spectrogram spec(1, 4, SpecDomain::LogMel);
  spec.at(0, 0) = -13.8;
  spec.at(0, 1) = 2.0;
  spec.at(0, 2) = -5.9;
  spec.at(0, 3) = 10.0;  // beyond max
  const Spectrogram out = scale_minmax(spec, {-13.8, 2.0});
  CHECK(out.domain == SpecDomain::ScaledLogMel);
  CHECK(out.at(0, 0) == 0.0);
  CHECK(out.at(0, 1) == 1.0);
  CHECK(out.at(0, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.at(0, 3) == 1.0);
}

TEST_CASE("scale_minmax rejects degenerate stats") {
  Spectrogram spec(1, 1, SpecDomain::LogMel);
  CHECK_THROWS_AS(scale_minmax(spec, {3.0, 3.0}), DataError);
  CHECK_THROWS_AS(scale_minmax(spec, {5.0, 2.0}), DataError);
}

TEST_CASE("crop_frames keeps a prefix and rejects short inputs") {
  Spectrogram spec(2, 5, SpecDomain::ScaledLogMel);
  for (std::size_t i = 0; i < spec.values.size(); ++i)
    spec.values[i] = static_cast<double>(i);
  const Spectrogram out = crop_frames(spec, 3);
  CHECK(out.frames == 3);
  CHECK(out.at(1, 2) == spec.at(1, 2));
  CHECK_THROWS_AS(crop_frames(spec, 6), DataError);
}

TEST_CASE("feature pipeline is deterministic given clip, seed and stats") {
  const AudioClip clip = sine_clip(440.0, 6400);
  const Stft stft;
  const MelFilterbank mel;
  const SpecAugmentPolicy policy;
  const auto run = [&]() {
    Rng rng(77);
    const Spectrogram aug = specaugment(stft.power(clip), policy, rng);
    return scale_minmax(mel.apply_log(aug), {-14.0, 3.0});
  };
  const Spectrogram a = run();
  const Spectrogram b = run();
  CHECK(a.values == b.values);
}

TEST_CASE("wav roundtrip preserves quantized samples") {
  const std::filesystem::path path = "test_roundtrip.wav";
  AudioClip clip = sine_clip(500.0, 2000, 0.4);
  write_wav(path, clip);
  const AudioClip back = read_wav(path);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    CHECK(back.samples[i] == doctest::Approx(clip.samples[i]).epsilon(1e-4));
  }
  // A second write of the read-back data is byte-stable.
  const std::filesystem::path path2 = "test_roundtrip2.wav";
  write_wav(path2, back);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("wav ingestion errors name the offending field") {
  const std::filesystem::path path = "test_bad.wav";
  const auto write_custom = [&path](std::uint16_t format, std::uint16_t channels,
                                    std::uint32_t rate, std::uint16_t bits) {
    std::ofstream out(path, std::ios::binary);
    const auto u16 = [&out](std::uint16_t v) {
      out.put(static_cast<char>(v & 0xff));
      out.put(static_cast<char>(v >> 8));
    };
    const auto u32 = [&out](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    out.write("RIFF", 4);
    u32(36 + 4);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    u32(16);
    u16(format);
    u16(channels);
    u32(rate);
    u32(rate * 2);
    u16(2);
    u16(bits);
    out.write("data", 4);
    u32(4);
    u32(0);
  };

  write_custom(1, 2, 16000, 16);
  CHECK_THROWS_WITH_AS(read_wav(path), doctest::Contains("channels"), DataError);
  write_custom(1, 1, 44100, 16);
  CHECK_THROWS_WITH_AS(read_wav(path), doctest::Contains("sample_rate"), DataError);
  write_custom(1, 1, 16000, 8);
  CHECK_THROWS_WITH_AS(read_wav(path), doctest::Contains("bits_per_sample"),
                       DataError);
  write_custom(3, 1, 16000, 16);
  CHECK_THROWS_WITH_AS(read_wav(path), doctest::Contains("format"), DataError);

  std::ofstream(path, std::ios::binary) << "NOTAWAVE";
  CHECK_THROWS_WITH_AS(read_wav(path), doctest::Contains("RIFF"), DataError);
  CHECK_THROWS_AS(read_wav("does_not_exist.wav"), DataError);
  std::filesystem::remove(path);
}
