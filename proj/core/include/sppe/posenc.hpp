#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sppe/ops.hpp"
#include "sppe/patching.hpp"
#include "sppe/tensor.hpp"

namespace sppe {

// The seven positional-encoding variants. TimeALiBi pairs the time-only
// fixed bias with absolute embeddings so frequency positions stay
// discriminable.
enum class PEVariant {
  None,
  Absolute,
  ALiBi2D,
  TimeALiBi,
  LearnedRelative,
  Conditional,
  ConditionalPlusAbsolute,
};

inline const std::vector<std::pair<PEVariant, const char*>>& pe_variant_names() {
  static const std::vector<std::pair<PEVariant, const char*>> names = {
      {PEVariant::None, "none"},
      {PEVariant::Absolute, "absolute"},
      {PEVariant::ALiBi2D, "alibi2d"},
      {PEVariant::TimeALiBi, "time-alibi"},
      {PEVariant::LearnedRelative, "learned-relative"},
      {PEVariant::Conditional, "conditional"},
      {PEVariant::ConditionalPlusAbsolute, "conditional+absolute"},
  };
  return names;
}

inline const char* to_string(PEVariant v) {
  for (const auto& [variant, name] : pe_variant_names())
    if (variant == v) return name;
  return "?";
}

enum class BiasKind { None, TimeOnly, TwoD, Learned };

// How a variant decomposes into the three mechanisms.
struct PEFeatures {
  bool absolute = false;
  BiasKind bias = BiasKind::None;
  bool peg = false;
};

inline PEFeatures pe_features(PEVariant v) {
  switch (v) {
    case PEVariant::None: return {false, BiasKind::None, false};
    case PEVariant::Absolute: return {true, BiasKind::None, false};
    case PEVariant::ALiBi2D: return {false, BiasKind::TwoD, false};
    case PEVariant::TimeALiBi: return {true, BiasKind::TimeOnly, false};
    case PEVariant::LearnedRelative: return {false, BiasKind::Learned, false};
    case PEVariant::Conditional: return {false, BiasKind::None, true};
    case PEVariant::ConditionalPlusAbsolute: return {true, BiasKind::None, true};
  }
  return {};
}

enum class AlibiAxis { Time, Frequency };

struct AlibiSlope {
  double m = 0.0;
  AlibiAxis axis = AlibiAxis::Time;
};

// m = 0.5^(16 h / N_h) with h the 1-based index within the head's axis
// group. 2D mode splits heads evenly, first half time, second half
// frequency; time-only mode points every head at the time axis.
inline std::vector<AlibiSlope> alibi_slopes(int heads, BiasKind mode) {
  if (mode != BiasKind::TimeOnly && mode != BiasKind::TwoD) {
    throw std::invalid_argument("alibi_slopes: mode must be time-only or 2D");
  }
  if (heads < 1) throw std::invalid_argument("alibi_slopes: need >= 1 head");
  if (mode == BiasKind::TwoD && heads % 2 != 0) {
    throw std::invalid_argument("alibi_slopes: 2D mode requires an even head "
                                "count, got " + std::to_string(heads));
  }
  std::vector<AlibiSlope> slopes(heads);
  const int group = mode == BiasKind::TwoD ? heads / 2 : heads;
  for (int h = 0; h < heads; ++h) {
    const int within = (h % group) + 1;
    slopes[h].m = std::pow(0.5, 16.0 * within / static_cast<double>(heads));
    slopes[h].axis = (mode == BiasKind::TwoD && h >= group) ? AlibiAxis::Frequency
                                                            : AlibiAxis::Time;
  }
  return slopes;
}

// Fixed per-head bias matrices R_ij = -m |dt(i,j)| or -m |df(i,j)| over the
// layout, zero on CLS rows/columns. Pure function of (layout, heads, mode);
// contains no trainable parameters and is cached by the model across steps.
template <typename T>
std::vector<Tensor<T>> alibi_bias(const PatchLayout& layout, int heads,
                                  BiasKind mode) {
  const std::vector<AlibiSlope> slopes = alibi_slopes(heads, mode);
  const int rows = layout.rows();
  const int cls = layout.cls_present ? 1 : 0;
  std::vector<Tensor<T>> biases;
  biases.reserve(slopes.size());
  for (const AlibiSlope& s : slopes) {
    Tensor<T> r = Tensor<T>::zeros(
        {static_cast<std::size_t>(rows), static_cast<std::size_t>(rows)});
    for (int i = 0; i < layout.seq_len(); ++i) {
      for (int j = 0; j < layout.seq_len(); ++j) {
        const int delta =
            s.axis == AlibiAxis::Time ? layout.dt(i, j) : layout.df(i, j);
        r.at(static_cast<std::size_t>(cls + i), static_cast<std::size_t>(cls + j)) =
            static_cast<T>(-s.m * std::abs(delta));
      }
    }
    biases.push_back(std::move(r));
  }
  return biases;
}

// Learned relative attention bias of one head:
//   R_ij = <Q_i, E^t[dt(i,j) + t_patches - 1]> + <Q_i, E^f[df(i,j) + f_patches - 1]>
// for non-CLS pairs; CLS rows/columns are zero. Gradients flow to Q and to
// both embedding tables. The tables are shared across heads within a block.
template <typename T>
Tensor<T> relative_bias(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& et,
                        const Tensor<T>& ef, const PatchLayout& layout) {
  const std::size_t rows = static_cast<std::size_t>(layout.rows());
  const std::size_t dk = q.cols();
  if (q.rank() != 2 || q.shape[0] != rows) {
    throw std::invalid_argument("relative_bias: Q " + shape_str(q.shape) +
                                " does not match layout rows " +
                                std::to_string(rows));
  }
  const std::size_t t_range = 2 * static_cast<std::size_t>(layout.t_patches) - 1;
  const std::size_t f_range = 2 * static_cast<std::size_t>(layout.f_patches) - 1;
  if (et.rank() != 2 || et.shape[0] != t_range || et.shape[1] != dk ||
      ef.rank() != 2 || ef.shape[0] != f_range || ef.shape[1] != dk) {
    throw std::invalid_argument(
        "relative_bias: embedding tables " + shape_str(et.shape) + "/" +
        shape_str(ef.shape) + " do not match layout ranges (" +
        std::to_string(t_range) + "/" + std::to_string(f_range) + ") x " +
        std::to_string(dk));
  }
  const int cls = layout.cls_present ? 1 : 0;
  const int n = layout.seq_len();
  Tensor<T> r = detail::make_output<T>({rows, rows}, track_grad(tape, q, et, ef));
  for (int i = 0; i < n; ++i) {
    const T* qi = q.ptr() + static_cast<std::size_t>(cls + i) * dk;
    T* rrow = r.ptr() + static_cast<std::size_t>(cls + i) * rows;
    for (int j = 0; j < n; ++j) {
      const T* et_row =
          et.ptr() + static_cast<std::size_t>(layout.dt(i, j) + layout.t_patches - 1) * dk;
      const T* ef_row =
          ef.ptr() + static_cast<std::size_t>(layout.df(i, j) + layout.f_patches - 1) * dk;
      T acc = T(0);
      for (std::size_t c = 0; c < dk; ++c) acc += qi[c] * (et_row[c] + ef_row[c]);
      rrow[cls + j] = acc;
    }
  }
  if (r.requires_grad) {
    tape->record([q, et, ef, r, layout, rows, dk, cls, n]() {
      const T* go = r.gptr();
      for (int i = 0; i < n; ++i) {
        const T* qi = q.ptr() + static_cast<std::size_t>(cls + i) * dk;
        const T* grow = go + static_cast<std::size_t>(cls + i) * rows;
        T* gqi = q.requires_grad
                     ? q.grad->data() + static_cast<std::size_t>(cls + i) * dk
                     : nullptr;
        for (int j = 0; j < n; ++j) {
          const T g = grow[cls + j];
          if (g == T(0)) continue;
          const std::size_t ti =
              static_cast<std::size_t>(layout.dt(i, j) + layout.t_patches - 1);
          const std::size_t fi =
              static_cast<std::size_t>(layout.df(i, j) + layout.f_patches - 1);
          const T* et_row = et.ptr() + ti * dk;
          const T* ef_row = ef.ptr() + fi * dk;
          if (gqi != nullptr) {
            for (std::size_t c = 0; c < dk; ++c)
              gqi[c] += g * (et_row[c] + ef_row[c]);
          }
          if (et.requires_grad) {
            T* get = et.grad->data() + ti * dk;
            for (std::size_t c = 0; c < dk; ++c) get[c] += g * qi[c];
          }
          if (ef.requires_grad) {
            T* gef = ef.grad->data() + fi * dk;
            for (std::size_t c = 0; c < dk; ++c) gef[c] += g * qi[c];
          }
        }
      }
    });
  }
  return r;
}

// Positional encoding generator: rearrange the non-CLS rows into the
// (f_patches, t_patches) grid, run a per-channel 3x3 convolution (stride 1,
// zero padding 1), and add the result back onto the sequence. The CLS row
// passes through unchanged. Equals seq + grid_to_seq(conv3x3(seq_to_grid(seq))).
template <typename T>
Tensor<T> peg_apply(Tape<T>* tape, const Tensor<T>& seq, const Tensor<T>& kernel,
                    const Tensor<T>& bias, const PatchLayout& layout) {
  const std::size_t rows = static_cast<std::size_t>(layout.rows());
  const std::size_t d = seq.cols();
  if (seq.rank() != 2 || seq.shape[0] != rows) {
    throw std::invalid_argument("peg_apply: seq " + shape_str(seq.shape) +
                                " does not match layout rows " +
                                std::to_string(rows));
  }
  if (kernel.rank() != 3 || kernel.shape[0] != d || kernel.shape[1] != 3 ||
      kernel.shape[2] != 3) {
    throw std::invalid_argument("peg_apply: kernel must be (d x 3 x 3), got " +
                                shape_str(kernel.shape));
  }
  if (bias.rank() != 1 || bias.shape[0] != d) {
    throw std::invalid_argument("peg_apply: bias must be rank-1 of " +
                                std::to_string(d));
  }
  const int f = layout.f_patches, t = layout.t_patches;
  const int cls = layout.cls_present ? 1 : 0;
  const auto row_of = [cls, f](int fi, int ti) {
    return static_cast<std::size_t>(cls + ti * f + fi);
  };
  Tensor<T> out =
      detail::make_output<T>(seq.shape, track_grad(tape, seq, kernel, bias));
  std::copy(seq.data->begin(), seq.data->end(), out.data->begin());
  for (int fi = 0; fi < f; ++fi) {
    for (int ti = 0; ti < t; ++ti) {
      T* dst = out.ptr() + row_of(fi, ti) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += bias.ptr()[c];
      for (int df = -1; df <= 1; ++df) {
        for (int dt = -1; dt <= 1; ++dt) {
          const int sf = fi + df, st = ti + dt;
          if (sf < 0 || sf >= f || st < 0 || st >= t) continue;  // zero padding
          const T* src = seq.ptr() + row_of(sf, st) * d;
          const T* k = kernel.ptr() + static_cast<std::size_t>((df + 1) * 3 + dt + 1);
          for (std::size_t c = 0; c < d; ++c) dst[c] += k[c * 9] * src[c];
        }
      }
    }
  }
  if (out.requires_grad) {
    tape->record([seq, kernel, bias, out, layout, d, f, t, cls, row_of]() {
      const T* go = out.gptr();
      if (seq.requires_grad) {  // residual path
        T* gs = seq.grad->data();
        for (std::size_t i = 0; i < seq.numel(); ++i) gs[i] += go[i];
      }
      for (int fi = 0; fi < f; ++fi) {
        for (int ti = 0; ti < t; ++ti) {
          const T* g = go + row_of(fi, ti) * d;
          if (bias.requires_grad) {
            T* gb = bias.grad->data();
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[c];
          }
          for (int df = -1; df <= 1; ++df) {
            for (int dt = -1; dt <= 1; ++dt) {
              const int sf = fi + df, st = ti + dt;
              if (sf < 0 || sf >= f || st < 0 || st >= t) continue;
              const std::size_t koff = static_cast<std::size_t>((df + 1) * 3 + dt + 1);
              const T* src = seq.ptr() + row_of(sf, st) * d;
              if (kernel.requires_grad) {
                T* gk = kernel.grad->data() + koff;
                for (std::size_t c = 0; c < d; ++c) gk[c * 9] += g[c] * src[c];
              }
              if (seq.requires_grad) {
                T* gsrc = seq.grad->data() + row_of(sf, st) * d;
                const T* k = kernel.ptr() + koff;
                for (std::size_t c = 0; c < d; ++c) gsrc[c] += k[c * 9] * g[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Adds the absolute positional embedding to the non-CLS rows.
template <typename T>
Tensor<T> absolute_add(Tape<T>* tape, const Tensor<T>& seq, const Tensor<T>& p,
                       const PatchLayout& layout) {
  if (p.rank() != 2 || p.shape[0] != static_cast<std::size_t>(layout.seq_len())) {
    throw std::invalid_argument("absolute_add: P " + shape_str(p.shape) +
                                " does not match layout N " +
                                std::to_string(layout.seq_len()));
  }
  return add_to_rows(tape, seq, p, layout.cls_present ? 1 : 0);
}

}  // namespace sppe
