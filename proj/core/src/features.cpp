#include "sppe/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sppe {

Stft::Stft() {
  window_.resize(kWindow);
  for (std::size_t n = 0; n < kWindow; ++n) {
    window_[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) /
                                      static_cast<double>(kWindow));
  }
  cos_table_.resize(kBins * kWindow);
  sin_table_.resize(kBins * kWindow);
  for (std::size_t b = 0; b < kBins; ++b) {
    for (std::size_t n = 0; n < kWindow; ++n) {
      const double phase = 2.0 * M_PI * static_cast<double>(b) *
                           static_cast<double>(n) / static_cast<double>(kWindow);
      cos_table_[b * kWindow + n] = std::cos(phase);
      sin_table_[b * kWindow + n] = std::sin(phase);
    }
  }
}

Spectrogram Stft::power(const AudioClip& clip) const {
  if (clip.sample_rate != 16000) {
    throw DataError("stft: sample_rate " + std::to_string(clip.sample_rate) +
                    " != 16000");
  }
  if (clip.samples.size() < kWindow) {
    throw DataError("stft: clip of " + std::to_string(clip.samples.size()) +
                    " samples is shorter than one window (" +
                    std::to_string(kWindow) + ")");
  }
  const std::size_t n_frames = frame_count(clip.samples.size());
  Spectrogram spec(kBins, n_frames, SpecDomain::LinearPower);

  std::vector<double> frame(kWindow);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const double* x = clip.samples.data() + t * kHop;
    for (std::size_t n = 0; n < kWindow; ++n) frame[n] = x[n] * window_[n];
    for (std::size_t b = 0; b < kBins; ++b) {
      const double* ct = cos_table_.data() + b * kWindow;
      const double* st = sin_table_.data() + b * kWindow;
      double re = 0.0, im = 0.0;
      for (std::size_t n = 0; n < kWindow; ++n) {
        re += frame[n] * ct[n];
        im -= frame[n] * st[n];
      }
      spec.at(b, t) = re * re + im * im;
    }
  }
  return spec;
}

double MelFilterbank::hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double MelFilterbank::mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(std::size_t n_mels, std::size_t n_bins,
                             double sample_rate, double f_min, double f_max)
    : n_mels_(n_mels), n_bins_(n_bins), weights_(n_mels * n_bins, 0.0) {
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> corners(n_mels + 2);
  for (std::size_t k = 0; k < corners.size(); ++k) {
    corners[k] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(k) /
                                        static_cast<double>(n_mels + 1));
  }
  // Bin center frequencies for n_fft == 2 * (n_bins - 1).
  const double bin_hz = sample_rate / (2.0 * static_cast<double>(n_bins - 1));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = corners[m], center = corners[m + 1], right = corners[m + 2];
    for (std::size_t i = 0; i < n_bins; ++i) {
      const double f = bin_hz * static_cast<double>(i);
      double w = 0.0;
      if (f > left && f < right) {
        w = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
      }
      weights_[m * n_bins + i] = w;
    }
  }
}

Spectrogram MelFilterbank::apply_log(const Spectrogram& linear_power) const {
  if (linear_power.domain != SpecDomain::LinearPower) {
    throw std::invalid_argument(
        std::string("mel_log: requires linear-power domain, got ") +
        to_string(linear_power.domain));
  }
  if (linear_power.bins != n_bins_) {
    throw std::invalid_argument("mel_log: expected " + std::to_string(n_bins_) +
                                " linear bins, got " +
                                std::to_string(linear_power.bins));
  }
  Spectrogram out(n_mels_, linear_power.frames, SpecDomain::LogMel);
  for (std::size_t m = 0; m < n_mels_; ++m) {
    for (std::size_t t = 0; t < linear_power.frames; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n_bins_; ++i) {
        const double w = weights_[m * n_bins_ + i];
        if (w != 0.0) acc += w * linear_power.at(i, t);
      }
      out.at(m, t) = std::log(acc + kLogEps);
    }
  }
  return out;
}

Spectrogram scale_minmax(const Spectrogram& log_mel, const ScaleStats& stats) {
  if (log_mel.domain != SpecDomain::LogMel) {
    throw std::invalid_argument(
        std::string("scale_minmax: requires log-mel domain, got ") +
        to_string(log_mel.domain));
  }
  if (!(stats.max > stats.min)) {
    throw DataError("scale_minmax: degenerate stats, max " +
                    std::to_string(stats.max) + " <= min " +
                    std::to_string(stats.min));
  }
  Spectrogram out = log_mel;
  out.domain = SpecDomain::ScaledLogMel;
  const double range = stats.max - stats.min;
  for (double& v : out.values) {
    v = std::clamp((v - stats.min) / range, 0.0, 1.0);
  }
  return out;
}

Spectrogram crop_frames(const Spectrogram& spec, std::size_t frames) {
  if (spec.frames < frames) {
    throw DataError("crop_frames: need " + std::to_string(frames) +
                    " frames, spectrogram has " + std::to_string(spec.frames));
  }
  Spectrogram out(spec.bins, frames, spec.domain);
  for (std::size_t b = 0; b < spec.bins; ++b)
    for (std::size_t t = 0; t < frames; ++t) out.at(b, t) = spec.at(b, t);
  return out;
}

}  // namespace sppe
