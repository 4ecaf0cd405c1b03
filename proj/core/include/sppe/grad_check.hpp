#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sppe/errors.hpp"
#include "sppe/ops.hpp"
#include "sppe/tensor.hpp"

namespace sppe {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t coords_checked = 0;
  std::string worst;  // "param 2 coord 17: analytic=..., fd=..."
};

// Compares the reverse-mode gradient of a scalar-valued function against
// central finite differences at every coordinate of every parameter.
// 64-bit only: FD differencing is unreliable at float precision.
//
// `fn` must rebuild the forward pass from the current parameter values each
// call; it receives a tape (nullptr for the FD evaluations).
inline GradCheckReport grad_check(
    const std::function<Tensor<double>(Tape<double>*)>& fn,
    const std::vector<Tensor<double>*>& params, double eps = 1e-5,
    double tol = 1e-4) {
  if (eps < 1e-7 || eps > 1e-4) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-4]");
  }
  for (Tensor<double>* p : params) {
    if (!p->requires_grad) {
      throw std::invalid_argument("grad_check: all params must require grad");
    }
    p->zero_grad();
  }

  Tape<double> tape;
  Tensor<double> loss = fn(&tape);
  if (loss.numel() != 1) {
    throw std::invalid_argument("grad_check: fn must return a scalar");
  }
  if (!loss.all_finite()) {
    throw NumericError("grad_check: non-finite loss at evaluation point");
  }
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor<double>* p : params) analytic.push_back(*p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>* p = params[pi];
    for (std::size_t ci = 0; ci < p->numel(); ++ci) {
      const double saved = (*p->data)[ci];
      (*p->data)[ci] = saved + eps;
      const double f_plus = fn(nullptr).at(0);
      (*p->data)[ci] = saved - eps;
      const double f_minus = fn(nullptr).at(0);
      (*p->data)[ci] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericError("grad_check: non-finite perturbed loss");
      }
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double an = analytic[pi][ci];
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "param " + std::to_string(pi) + " coord " +
                       std::to_string(ci) + ": analytic=" + std::to_string(an) +
                       ", fd=" + std::to_string(fd);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace sppe
