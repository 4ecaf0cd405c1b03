#pragma once

#include <cstddef>
#include <vector>

#include "sppe/errors.hpp"
#include "sppe/spectrogram.hpp"
#include "sppe/wav.hpp"

namespace sppe {

// Front end: 16 kHz PCM -> linear power spectrogram -> (SpecAugment) ->
// log-mel -> min/max scaling. SpecAugment runs in the linear-power domain,
// before the mel filter bank.

// Power spectrogram: Hann window of 400 samples (25 ms), hop 160 (10 ms),
// n_fft == window length, one-sided 201 bins, no center padding.
// Frame count: floor((len - 400) / 160) + 1.
class Stft {
 public:
  static constexpr std::size_t kWindow = 400;
  static constexpr std::size_t kHop = 160;
  static constexpr std::size_t kBins = kWindow / 2 + 1;  // 201

  Stft();

  Spectrogram power(const AudioClip& clip) const;

  static std::size_t frame_count(std::size_t num_samples) {
    return num_samples < kWindow ? 0 : (num_samples - kWindow) / kHop + 1;
  }

 private:
  std::vector<double> window_;
  std::vector<double> cos_table_;  // kBins x kWindow
  std::vector<double> sin_table_;
};

struct SpecAugmentPolicy {
  double apply_rate = 0.5;
  int max_masks_per_axis = 2;
  int max_freq_bins = 64;  // of the 201 linear bins
  int max_frames = 100;
};

// With probability apply_rate, draws k_t, k_f in {0..max_masks_per_axis}
// masks; each mask has width uniform in [0, max] and uniform start, and sets
// the covered cells to 0. RNG consumption order: apply draw, k_t, per time
// mask (width, start), k_f, per freq mask (width, start).
template <typename RngLike>
Spectrogram specaugment(const Spectrogram& spec, const SpecAugmentPolicy& policy,
                        RngLike& rng) {
  if (spec.domain != SpecDomain::LinearPower) {
    throw std::invalid_argument(
        std::string("specaugment: requires linear-power domain, got ") +
        to_string(spec.domain));
  }
  Spectrogram out = spec;
  if (rng.uniform() >= policy.apply_rate) return out;

  const int frames = static_cast<int>(spec.frames);
  const int bins = static_cast<int>(spec.bins);

  const int k_t = rng.uniform_int(0, policy.max_masks_per_axis);
  for (int m = 0; m < k_t; ++m) {
    const int width = rng.uniform_int(0, std::min(policy.max_frames, frames));
    const int start = rng.uniform_int(0, frames - width);
    for (int b = 0; b < bins; ++b)
      for (int f = start; f < start + width; ++f) out.at(b, f) = 0.0;
  }
  const int k_f = rng.uniform_int(0, policy.max_masks_per_axis);
  for (int m = 0; m < k_f; ++m) {
    const int width = rng.uniform_int(0, std::min(policy.max_freq_bins, bins));
    const int start = rng.uniform_int(0, bins - width);
    for (int b = start; b < start + width; ++b)
      for (int f = 0; f < frames; ++f) out.at(b, f) = 0.0;
  }
  return out;
}

// 64 triangular filters on the HTK mel scale (2595 log10(1 + f/700)) spanning
// 0-8000 Hz, followed by log(x + 1e-6).
class MelFilterbank {
 public:
  MelFilterbank(std::size_t n_mels = 64, std::size_t n_bins = 201,
                double sample_rate = 16000.0, double f_min = 0.0,
                double f_max = 8000.0);

  Spectrogram apply_log(const Spectrogram& linear_power) const;

  std::size_t n_mels() const { return n_mels_; }
  std::size_t n_bins() const { return n_bins_; }
  double weight(std::size_t mel, std::size_t bin) const {
    return weights_[mel * n_bins_ + bin];
  }

  static double hz_to_mel(double hz);
  static double mel_to_hz(double mel);

  static constexpr double kLogEps = 1e-6;

 private:
  std::size_t n_mels_, n_bins_;
  std::vector<double> weights_;  // n_mels x n_bins
};

struct ScaleStats {
  double min = 0.0;
  double max = 1.0;
};

// (x - min) / (max - min), clamped to [0, 1].
Spectrogram scale_minmax(const Spectrogram& log_mel, const ScaleStats& stats);

// Keeps the first `frames` frames; errors if the input is shorter.
Spectrogram crop_frames(const Spectrogram& spec, std::size_t frames);

}  // namespace sppe
