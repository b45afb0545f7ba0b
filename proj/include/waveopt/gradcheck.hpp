#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "waveopt/tensor.hpp"

namespace waveopt {

// Central-difference check of an analytic gradient. Returns the maximum over
// coordinates of |analytic - numeric| / max(|analytic|, |numeric|, guard).
template <typename T>
double finite_diff_check(const std::function<double(const Tensor<T>&)>& fn,
                         const Tensor<T>& analytic_grad, const Tensor<T>& point,
                         double eps = 1e-3, double guard = 1e-6) {
  check_shape(analytic_grad.same_shape(point), "finite_diff_check: gradient shape");
  check_arg(eps > 0, "finite_diff_check: eps must be positive");
  double worst = 0.0;
  Tensor<T> x = point;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T orig = x[i];
    x[i] = orig + static_cast<T>(eps);
    double fp = fn(x);
    x[i] = orig - static_cast<T>(eps);
    double fm = fn(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: non-finite function value");
    double numeric = (fp - fm) / (2.0 * eps);
    double analytic = static_cast<double>(analytic_grad[i]);
    double denom = std::max({std::abs(analytic), std::abs(numeric), guard});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

// Same check restricted to a subset of coordinates; used for large parameter
// tensors where a full sweep is wasteful.
template <typename T>
double finite_diff_check_sampled(const std::function<double(const Tensor<T>&)>& fn,
                                 const Tensor<T>& analytic_grad, const Tensor<T>& point,
                                 const std::vector<std::size_t>& coords,
                                 double eps = 1e-3, double guard = 1e-6) {
  check_shape(analytic_grad.same_shape(point), "finite_diff_check: gradient shape");
  double worst = 0.0;
  Tensor<T> x = point;
  for (std::size_t i : coords) {
    check_arg(i < x.numel(), "finite_diff_check: coordinate out of range");
    const T orig = x[i];
    x[i] = orig + static_cast<T>(eps);
    double fp = fn(x);
    x[i] = orig - static_cast<T>(eps);
    double fm = fn(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: non-finite function value");
    double numeric = (fp - fm) / (2.0 * eps);
    double analytic = static_cast<double>(analytic_grad[i]);
    double denom = std::max({std::abs(analytic), std::abs(numeric), guard});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace waveopt
