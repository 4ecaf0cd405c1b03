#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sppe {

enum class SpecDomain { LinearPower, LogMel, ScaledLogMel };

inline const char* to_string(SpecDomain d) {
  switch (d) {
    case SpecDomain::LinearPower: return "linear-power";
    case SpecDomain::LogMel: return "log-mel";
    case SpecDomain::ScaledLogMel: return "scaled-log-mel";
  }
  return "?";
}

// 2D grid of real values, frequency bins as rows, frames as columns.
struct Spectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<double> values;  // row-major, bins x frames
  SpecDomain domain = SpecDomain::LinearPower;

  Spectrogram() = default;
  Spectrogram(std::size_t b, std::size_t f, SpecDomain d)
      : bins(b), frames(f), values(b * f, 0.0), domain(d) {}

  double& at(std::size_t bin, std::size_t frame) {
    return values[bin * frames + frame];
  }
  double at(std::size_t bin, std::size_t frame) const {
    return values[bin * frames + frame];
  }
};

}  // namespace sppe
