#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sppe/rng.hpp"

namespace sppe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (const std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major tensor. Data and gradient buffers are shared so copies are
// cheap views onto the same storage; values are treated as immutable after
// construction except through the optimizer's explicit update step.
template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(Shape s, bool rg = false) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(shape_numel(t.shape), T(0));
    t.set_requires_grad(rg);
    return t;
  }

  static Tensor full(Shape s, T value, bool rg = false) {
    Tensor t = zeros(std::move(s), rg);
    for (T& v : *t.data) v = value;
    return t;
  }

  static Tensor from(Shape s, std::vector<T> values, bool rg = false) {
    if (shape_numel(s) != values.size()) {
      throw std::invalid_argument("tensor: " + shape_str(s) + " holds " +
                                  std::to_string(shape_numel(s)) +
                                  " values, got " +
                                  std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.set_requires_grad(rg);
    return t;
  }

  static Tensor scalar(T value, bool rg = false) {
    return from({1}, {value}, rg);
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) (*t.data)[i * n + i] = T(1);
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, double stddev, bool rg = false) {
    Tensor t = zeros(std::move(s), rg);
    for (T& v : *t.data) v = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg && !grad) {
      grad = std::make_shared<std::vector<T>>(data->size(), T(0));
    }
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T* gptr() { return grad->data(); }
  const T* gptr() const { return grad->data(); }

  T& at(std::size_t i) { return (*data)[i]; }
  T at(std::size_t i) const { return (*data)[i]; }
  T& at(std::size_t i, std::size_t j) { return (*data)[i * cols() + j]; }
  T at(std::size_t i, std::size_t j) const { return (*data)[i * cols() + j]; }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  bool all_finite() const {
    for (const T v : *data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

// Ordered record of primitive operations from one forward pass. Replaying it
// in reverse propagates the gradient of a scalar loss to every requires_grad
// tensor that participated. Single owner per forward pass.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  std::size_t size() const { return steps_.size(); }

  void backward(Tensor<T>& loss, T seed = T(1)) {
    if (loss.numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(loss.shape));
    }
    if (!loss.requires_grad) {
      throw std::invalid_argument("backward: loss does not require grad");
    }
    (*loss.grad)[0] += seed;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// Whether an op fed these inputs should produce a grad-tracking output.
template <typename T, typename... Ts>
bool track_grad(const Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (inputs.requires_grad || ...);
}

}  // namespace sppe
