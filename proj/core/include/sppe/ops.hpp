#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sppe/errors.hpp"
#include "sppe/tensor.hpp"

namespace sppe {

namespace detail {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// Reverse-mode primitives. Every op takes an optional tape; passing nullptr
// runs forward-only. Output tracks gradients iff the tape is present and at
// least one input requires grad. No broadcasting beyond row-wise bias add
// and scalar ops.

namespace detail {

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " +
                                shape_str(t.shape));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
}

template <typename T>
Tensor<T> make_output(Shape s, bool track) {
  Tensor<T> out = Tensor<T>::zeros(std::move(s));
  out.set_requires_grad(track);
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("matmul: inner extents do not agree, " +
                                shape_str(a.shape) + " x " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<T> out = detail::make_output<T>({m, n}, track_grad(tape, a, b));
  using Idx = Eigen::Index;
  detail::MatMap<T>(out.ptr(), Idx(m), Idx(n)).noalias() =
      detail::ConstMatMap<T>(a.ptr(), Idx(m), Idx(k)) *
      detail::ConstMatMap<T>(b.ptr(), Idx(k), Idx(n));
  if (out.requires_grad) {
    tape->record([a, b, out, m, k, n]() {
      const detail::ConstMatMap<T> go(out.gptr(), Idx(m), Idx(n));
      if (a.requires_grad) {
        detail::MatMap<T>(a.grad->data(), Idx(m), Idx(k)).noalias() +=
            go * detail::ConstMatMap<T>(b.ptr(), Idx(k), Idx(n)).transpose();
      }
      if (b.requires_grad) {
        detail::MatMap<T>(b.grad->data(), Idx(k), Idx(n)).noalias() +=
            detail::ConstMatMap<T>(a.ptr(), Idx(m), Idx(k)).transpose() * go;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>* tape, const Tensor<T>& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.shape[0], n = a.shape[1];
  Tensor<T> out = detail::make_output<T>({n, m}, track_grad(tape, a));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.ptr()[j * m + i] = a.ptr()[i * n + j];
  if (out.requires_grad) {
    tape->record([a, out, m, n]() {
      T* ga = a.grad->data();
      const T* go = out.gptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a, b));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (out.requires_grad) {
    tape->record([a, b, out, n]() {
      const T* go = out.gptr();
      if (a.requires_grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a, b));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (out.requires_grad) {
    tape->record([a, b, out, n]() {
      const T* go = out.gptr();
      if (a.requires_grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * b.ptr()[i];
      }
      if (b.requires_grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * a.ptr()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T c) {
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * c;
  if (out.requires_grad) {
    tape->record([a, out, c, n]() {
      T* ga = a.grad->data();
      const T* go = out.gptr();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

// out[i][j] = a[i][j] + bias[j]
template <typename T>
Tensor<T> add_rowwise(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_rank2(a, "add_rowwise");
  if (bias.rank() != 1 || bias.shape[0] != a.shape[1]) {
    throw std::invalid_argument("add_rowwise: bias " + shape_str(bias.shape) +
                                " does not match columns of " + shape_str(a.shape));
  }
  const std::size_t m = a.shape[0], n = a.shape[1];
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a, bias));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.ptr()[i * n + j] = a.ptr()[i * n + j] + bias.ptr()[j];
  if (out.requires_grad) {
    tape->record([a, bias, out, m, n]() {
      const T* go = out.gptr();
      if (a.requires_grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < m * n; ++i) ga[i] += go[i];
      }
      if (bias.requires_grad) {
        T* gb = bias.grad->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
      }
    });
  }
  return out;
}

// Copy of `a` with rows [offset, offset+b.rows) incremented by b. Used to add
// positional embeddings to the non-CLS rows while leaving CLS untouched.
template <typename T>
Tensor<T> add_to_rows(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b,
                      std::size_t offset) {
  detail::require_rank2(a, "add_to_rows");
  detail::require_rank2(b, "add_to_rows");
  if (a.shape[1] != b.shape[1] || offset + b.shape[0] > a.shape[0]) {
    throw std::invalid_argument("add_to_rows: " + shape_str(b.shape) +
                                " at row offset " + std::to_string(offset) +
                                " does not fit in " + shape_str(a.shape));
  }
  const std::size_t n = a.shape[1], bm = b.shape[0];
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a, b));
  std::copy(a.data->begin(), a.data->end(), out.data->begin());
  for (std::size_t i = 0; i < bm; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.ptr()[(offset + i) * n + j] += b.ptr()[i * n + j];
  if (out.requires_grad) {
    tape->record([a, b, out, offset, bm, n]() {
      const T* go = out.gptr();
      if (a.requires_grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < bm; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gb[i * n + j] += go[(offset + i) * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "concat_rows");
  detail::require_rank2(b, "concat_rows");
  if (a.shape[1] != b.shape[1]) {
    throw std::invalid_argument("concat_rows: column mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  const std::size_t n = a.shape[1];
  Tensor<T> out =
      detail::make_output<T>({a.shape[0] + b.shape[0], n}, track_grad(tape, a, b));
  std::copy(a.data->begin(), a.data->end(), out.data->begin());
  std::copy(b.data->begin(), b.data->end(),
            out.data->begin() + static_cast<std::ptrdiff_t>(a.numel()));
  if (out.requires_grad) {
    tape->record([a, b, out]() {
      const T* go = out.gptr();
      if (a.requires_grad) {
        T* ga = a.grad->data();
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad) {
        T* gb = b.grad->data();
        for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += go[a.numel() + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>* tape, const Tensor<T>& a, std::size_t begin,
                     std::size_t count) {
  detail::require_rank2(a, "slice_rows");
  if (begin + count > a.shape[0]) {
    throw std::invalid_argument("slice_rows: [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                shape_str(a.shape));
  }
  const std::size_t n = a.shape[1];
  Tensor<T> out = detail::make_output<T>({count, n}, track_grad(tape, a));
  std::copy(a.data->begin() + static_cast<std::ptrdiff_t>(begin * n),
            a.data->begin() + static_cast<std::ptrdiff_t>((begin + count) * n),
            out.data->begin());
  if (out.requires_grad) {
    tape->record([a, out, begin, count, n]() {
      T* ga = a.grad->data();
      const T* go = out.gptr();
      for (std::size_t i = 0; i < count * n; ++i) ga[begin * n + i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& a, std::size_t begin,
                     std::size_t count) {
  detail::require_rank2(a, "slice_cols");
  if (begin + count > a.shape[1]) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                shape_str(a.shape));
  }
  const std::size_t m = a.shape[0], n = a.shape[1];
  Tensor<T> out = detail::make_output<T>({m, count}, track_grad(tape, a));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out.ptr()[i * count + j] = a.ptr()[i * n + begin + j];
  if (out.requires_grad) {
    tape->record([a, out, begin, count, m, n]() {
      T* ga = a.grad->data();
      const T* go = out.gptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          ga[i * n + begin + j] += go[i * count + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t m = parts[0].shape[0];
  std::size_t n = 0;
  bool track = false;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.shape[0] != m) {
      throw std::invalid_argument("concat_cols: row mismatch " +
                                  shape_str(parts[0].shape) + " vs " +
                                  shape_str(p.shape));
    }
    n += p.shape[1];
    track = track || (tape != nullptr && p.requires_grad);
  }
  Tensor<T> out = detail::make_output<T>({m, n}, track);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pn = p.shape[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < pn; ++j)
        out.ptr()[i * n + col + j] = p.ptr()[i * pn + j];
    col += pn;
  }
  if (out.requires_grad) {
    tape->record([parts, out, m, n]() {
      const T* go = out.gptr();
      std::size_t c = 0;
      for (const auto& p : parts) {
        const std::size_t pn = p.shape[1];
        if (p.requires_grad) {
          T* gp = p.grad->data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pn; ++j)
              gp[i * pn + j] += go[i * n + c + j];
        }
        c += pn;
      }
    });
  }
  return out;
}

// Numerically stabilized softmax over the last dimension of a rank-2 tensor.
template <typename T>
Tensor<T> softmax_lastdim(Tape<T>* tape, const Tensor<T>& a) {
  detail::require_rank2(a, "softmax_lastdim");
  const std::size_t m = a.shape[0], n = a.shape[1];
  if (n < 1) throw std::invalid_argument("softmax_lastdim: empty last dim");
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a));
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = a.ptr() + i * n;
    T* orow = out.ptr() + i * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  if (out.requires_grad) {
    tape->record([a, out, m, n]() {
      T* ga = a.grad->data();
      const T* y = out.ptr();
      const T* gy = out.gptr();
      for (std::size_t i = 0; i < m; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += gy[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          ga[i * n + j] += y[i * n + j] * (gy[i * n + j] - dot);
      }
    });
  }
  return out;
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& a) {
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a));
  const std::size_t n = a.numel();
  constexpr double kInvSqrt2 = 0.7071067811865476;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a.ptr()[i]);
    out.ptr()[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  if (out.requires_grad) {
    tape->record([a, out, n]() {
      T* ga = a.grad->data();
      const T* go = out.gptr();
      constexpr double kInvSqrt2Pi = 0.3989422804014327;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(a.ptr()[i]);
        const double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += go[i] * static_cast<T>(d);
      }
    });
  }
  return out;
}

// Per-row layer normalization with trainable gain and bias.
template <typename T>
Tensor<T> layernorm_rows(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& gain,
                         const Tensor<T>& bias, T eps = T(1e-5)) {
  detail::require_rank2(a, "layernorm_rows");
  const std::size_t m = a.shape[0], n = a.shape[1];
  if (gain.rank() != 1 || gain.shape[0] != n || bias.rank() != 1 ||
      bias.shape[0] != n) {
    throw std::invalid_argument("layernorm_rows: gain/bias must be rank-1 of " +
                                std::to_string(n));
  }
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a, gain, bias));
  std::vector<T> inv_sigma(m), mean(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = a.ptr() + i * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    mean[i] = mu;
    inv_sigma[i] = is;
    T* orow = out.ptr() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      orow[j] = (row[j] - mu) * is * gain.ptr()[j] + bias.ptr()[j];
  }
  if (out.requires_grad) {
    tape->record([a, gain, bias, out, mean, inv_sigma, m, n]() {
      const T* go = out.gptr();
      for (std::size_t i = 0; i < m; ++i) {
        const T* row = a.ptr() + i * n;
        const T is = inv_sigma[i];
        const T mu = mean[i];
        // dgain/dbias accumulate over rows; dx via the standard LN backward.
        T sum_g = T(0), sum_gx = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          const T xhat = (row[j] - mu) * is;
          const T g = go[i * n + j] * gain.ptr()[j];
          sum_g += g;
          sum_gx += g * xhat;
        }
        if (gain.requires_grad || bias.requires_grad) {
          for (std::size_t j = 0; j < n; ++j) {
            const T xhat = (row[j] - mu) * is;
            if (gain.requires_grad) gain.grad->data()[j] += go[i * n + j] * xhat;
            if (bias.requires_grad) bias.grad->data()[j] += go[i * n + j];
          }
        }
        if (a.requires_grad) {
          T* ga = a.grad->data();
          const T invn = T(1) / static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T xhat = (row[j] - mu) * is;
            const T g = go[i * n + j] * gain.ptr()[j];
            ga[i * n + j] += is * (g - invn * sum_g - xhat * invn * sum_gx);
          }
        }
      }
    });
  }
  return out;
}

// Inverted dropout; identity when rate == 0.
template <typename T>
Tensor<T> dropout(Tape<T>* tape, const Tensor<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " +
                                std::to_string(rate));
  }
  if (rate == 0.0) return a;
  const std::size_t n = a.numel();
  auto mask = std::make_shared<std::vector<T>>(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < n; ++i)
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_scale;
  Tensor<T> out = detail::make_output<T>(a.shape, track_grad(tape, a));
  for (std::size_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * (*mask)[i];
  if (out.requires_grad) {
    tape->record([a, out, mask, n]() {
      T* ga = a.grad->data();
      const T* go = out.gptr();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& a) {
  Tensor<T> out = detail::make_output<T>({1}, track_grad(tape, a));
  T s = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.ptr()[i];
  out.ptr()[0] = s;
  if (out.requires_grad) {
    tape->record([a, out]() {
      T* ga = a.grad->data();
      const T g = out.gptr()[0];
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& a) {
  Tensor<T> s = sum_all(tape, a);
  return scale(tape, s, T(1) / static_cast<T>(a.numel()));
}

// Mean binary cross-entropy over all (row, class) cells, from logits.
// Stable form: max(z,0) - z*y + log1p(exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits_mean(Tape<T>* tape, const Tensor<T>& logits,
                               const Tensor<T>& targets) {
  detail::require_same_shape(logits, targets, "bce_with_logits_mean");
  const std::size_t n = logits.numel();
  if (n == 0) throw std::invalid_argument("bce_with_logits_mean: empty input");
  Tensor<T> out = detail::make_output<T>({1}, track_grad(tape, logits));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = static_cast<double>(logits.ptr()[i]);
    const double y = static_cast<double>(targets.ptr()[i]);
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  out.ptr()[0] = static_cast<T>(acc / static_cast<double>(n));
  if (out.requires_grad) {
    tape->record([logits, targets, out, n]() {
      T* gz = logits.grad->data();
      const T g = out.gptr()[0];
      const T invn = T(1) / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double z = static_cast<double>(logits.ptr()[i]);
        const double sig = 1.0 / (1.0 + std::exp(-z));
        gz[i] += g * invn * static_cast<T>(sig - static_cast<double>(targets.ptr()[i]));
      }
    });
  }
  return out;
}

// Mean softmax cross-entropy over rows; labels are class indices per row.
template <typename T>
Tensor<T> softmax_xent_mean(Tape<T>* tape, const Tensor<T>& logits,
                            const std::vector<int>& labels) {
  detail::require_rank2(logits, "softmax_xent_mean");
  const std::size_t m = logits.shape[0], n = logits.shape[1];
  if (labels.size() != m) {
    throw std::invalid_argument("softmax_xent_mean: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(m) + " rows");
  }
  for (const int c : labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= n) {
      throw std::invalid_argument("softmax_xent_mean: label " + std::to_string(c) +
                                  " out of range [0, " + std::to_string(n) + ")");
    }
  }
  Tensor<T> out = detail::make_output<T>({1}, track_grad(tape, logits));
  auto probs = std::make_shared<std::vector<T>>(m * n);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = logits.ptr() + i * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      (*probs)[i * n + j] = static_cast<T>(e);
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j)
      (*probs)[i * n + j] = static_cast<T>(static_cast<double>((*probs)[i * n + j]) / sum);
    acc += std::log(sum) - static_cast<double>(row[labels[i]] - mx);
  }
  out.ptr()[0] = static_cast<T>(acc / static_cast<double>(m));
  if (out.requires_grad) {
    tape->record([logits, labels, out, probs, m, n]() {
      T* gz = logits.grad->data();
      const T g = out.gptr()[0];
      const T invm = T(1) / static_cast<T>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          T p = (*probs)[i * n + j];
          if (j == static_cast<std::size_t>(labels[i])) p -= T(1);
          gz[i * n + j] += g * invm * p;
        }
      }
    });
  }
  return out;
}

}  // namespace sppe
