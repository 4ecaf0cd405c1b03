#pragma once

#include <cstddef>
#include <string>

#include "sppe/ops.hpp"
#include "sppe/spectrogram.hpp"
#include "sppe/tensor.hpp"

namespace sppe {

// Sequence order is time-major with the frequency index varying fastest:
// patch i covers time chunk i / f_patches and frequency band i % f_patches.
// The CLS row, when present, sits at sequence row 0 and has no position.
struct PatchLayout {
  int t_patches = 31;
  int f_patches = 8;
  int patch_frames = 32;
  int patch_mels = 8;
  bool cls_present = true;

  int seq_len() const { return t_patches * f_patches; }
  int rows() const { return seq_len() + (cls_present ? 1 : 0); }
  int patch_dim() const { return patch_frames * patch_mels; }
  int grid_bins() const { return f_patches * patch_mels; }
  int grid_frames() const { return t_patches * patch_frames; }

  int time_of(int i) const { return i / f_patches; }
  int freq_of(int i) const { return i % f_patches; }
  int dt(int i, int j) const { return time_of(i) - time_of(j); }
  int df(int i, int j) const { return freq_of(i) - freq_of(j); }

  static PatchLayout paper() { return PatchLayout{31, 8, 32, 8, true}; }
  static PatchLayout desk() { return PatchLayout{8, 4, 32, 8, true}; }
};

// Exact rearrangement of the scaled log-mel grid into N x (patch_mels *
// patch_frames) rows; patch content is flattened mel-major (the frame index
// varies fastest within a patch).
template <typename T>
Tensor<T> patchify(const Spectrogram& spec, const PatchLayout& layout) {
  if (spec.domain != SpecDomain::ScaledLogMel) {
    throw std::invalid_argument(
        std::string("patchify: requires scaled-log-mel domain, got ") +
        to_string(spec.domain));
  }
  if (static_cast<int>(spec.bins) != layout.grid_bins() ||
      static_cast<int>(spec.frames) != layout.grid_frames()) {
    throw std::invalid_argument(
        "patchify: spectrogram " + std::to_string(spec.bins) + "x" +
        std::to_string(spec.frames) + " does not match layout grid " +
        std::to_string(layout.grid_bins()) + "x" +
        std::to_string(layout.grid_frames()));
  }
  const int n = layout.seq_len();
  const int dim = layout.patch_dim();
  Tensor<T> out = Tensor<T>::zeros(
      {static_cast<std::size_t>(n), static_cast<std::size_t>(dim)});
  for (int i = 0; i < n; ++i) {
    const int t0 = layout.time_of(i) * layout.patch_frames;
    const int f0 = layout.freq_of(i) * layout.patch_mels;
    T* row = out.ptr() + static_cast<std::size_t>(i) * dim;
    for (int m = 0; m < layout.patch_mels; ++m) {
      for (int fr = 0; fr < layout.patch_frames; ++fr) {
        row[m * layout.patch_frames + fr] =
            static_cast<T>(spec.at(static_cast<std::size_t>(f0 + m),
                                   static_cast<std::size_t>(t0 + fr)));
      }
    }
  }
  return out;
}

template <typename T>
Spectrogram unpatchify(const Tensor<T>& patches, const PatchLayout& layout) {
  if (patches.rank() != 2 ||
      patches.shape[0] != static_cast<std::size_t>(layout.seq_len()) ||
      patches.shape[1] != static_cast<std::size_t>(layout.patch_dim())) {
    throw std::invalid_argument("unpatchify: got " + shape_str(patches.shape) +
                                ", layout wants (" +
                                std::to_string(layout.seq_len()) + "x" +
                                std::to_string(layout.patch_dim()) + ")");
  }
  Spectrogram spec(static_cast<std::size_t>(layout.grid_bins()),
                   static_cast<std::size_t>(layout.grid_frames()),
                   SpecDomain::ScaledLogMel);
  for (int i = 0; i < layout.seq_len(); ++i) {
    const int t0 = layout.time_of(i) * layout.patch_frames;
    const int f0 = layout.freq_of(i) * layout.patch_mels;
    const T* row = patches.ptr() + static_cast<std::size_t>(i) * layout.patch_dim();
    for (int m = 0; m < layout.patch_mels; ++m) {
      for (int fr = 0; fr < layout.patch_frames; ++fr) {
        spec.at(static_cast<std::size_t>(f0 + m), static_cast<std::size_t>(t0 + fr)) =
            static_cast<double>(row[m * layout.patch_frames + fr]);
      }
    }
  }
  return spec;
}

// rows 1..N = patches * W + b, row 0 = trainable CLS vector.
template <typename T>
Tensor<T> project_and_cls(Tape<T>* tape, const Tensor<T>& patches,
                          const Tensor<T>& w, const Tensor<T>& b,
                          const Tensor<T>& cls) {
  if (cls.rank() != 2 || cls.shape[0] != 1) {
    throw std::invalid_argument("project_and_cls: cls must be (1 x d), got " +
                                shape_str(cls.shape));
  }
  Tensor<T> projected = add_rowwise(tape, matmul(tape, patches, w), b);
  return concat_rows(tape, cls, projected);
}

// Sequence rows 1..N rearranged into an (f_patches, t_patches, d) grid; the
// CLS row is carried alongside, never through the grid.
template <typename T>
struct GridWithCls {
  Tensor<T> grid;  // rank-3: f_patches x t_patches x d
  Tensor<T> cls;   // 1 x d
};

template <typename T>
GridWithCls<T> seq_to_grid(const Tensor<T>& seq, const PatchLayout& layout) {
  const std::size_t rows = static_cast<std::size_t>(layout.rows());
  if (seq.rank() != 2 || seq.shape[0] != rows) {
    throw std::invalid_argument("seq_to_grid: got " + shape_str(seq.shape) +
                                ", layout wants " + std::to_string(rows) + " rows");
  }
  const std::size_t d = seq.shape[1];
  const std::size_t f = static_cast<std::size_t>(layout.f_patches);
  const std::size_t t = static_cast<std::size_t>(layout.t_patches);
  const std::size_t cls_off = layout.cls_present ? 1 : 0;
  GridWithCls<T> out;
  out.grid = Tensor<T>::zeros({f, t, d});
  out.cls = Tensor<T>::zeros({1, d});
  if (layout.cls_present) {
    for (std::size_t j = 0; j < d; ++j) out.cls.ptr()[j] = seq.ptr()[j];
  }
  for (int i = 0; i < layout.seq_len(); ++i) {
    const std::size_t fi = static_cast<std::size_t>(layout.freq_of(i));
    const std::size_t ti = static_cast<std::size_t>(layout.time_of(i));
    const T* src = seq.ptr() + (cls_off + static_cast<std::size_t>(i)) * d;
    T* dst = out.grid.ptr() + (fi * t + ti) * d;
    std::copy(src, src + d, dst);
  }
  return out;
}

template <typename T>
Tensor<T> grid_to_seq(const GridWithCls<T>& g, const PatchLayout& layout) {
  const std::size_t f = static_cast<std::size_t>(layout.f_patches);
  const std::size_t t = static_cast<std::size_t>(layout.t_patches);
  if (g.grid.rank() != 3 || g.grid.shape[0] != f || g.grid.shape[1] != t) {
    throw std::invalid_argument("grid_to_seq: got " + shape_str(g.grid.shape) +
                                ", layout wants (" + std::to_string(f) + "x" +
                                std::to_string(t) + "xd)");
  }
  const std::size_t d = g.grid.shape[2];
  const std::size_t cls_off = layout.cls_present ? 1 : 0;
  Tensor<T> seq =
      Tensor<T>::zeros({static_cast<std::size_t>(layout.rows()), d});
  if (layout.cls_present) {
    for (std::size_t j = 0; j < d; ++j) seq.ptr()[j] = g.cls.ptr()[j];
  }
  for (int i = 0; i < layout.seq_len(); ++i) {
    const std::size_t fi = static_cast<std::size_t>(layout.freq_of(i));
    const std::size_t ti = static_cast<std::size_t>(layout.time_of(i));
    const T* src = g.grid.ptr() + (fi * t + ti) * d;
    T* dst = seq.ptr() + (cls_off + static_cast<std::size_t>(i)) * d;
    std::copy(src, src + d, dst);
  }
  return seq;
}

}  // namespace sppe
