#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "waveopt/tensor.hpp"

namespace waveopt {

// PSNR in dB for images in [0,1]: 10*log10(1/MSE). Identical images return
// +infinity; resolve_psnr() caps the sentinel at 100 dB for serialization
// and ratio arithmetic.
constexpr double kPsnrCapDb = 100.0;

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.same_shape(b), "psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

inline double resolve_psnr(double db) { return std::min(db, kPsnrCapDb); }

inline double psnr_ratio(double psnr_t, double psnr_full) {
  double num = resolve_psnr(psnr_t);
  double den = resolve_psnr(psnr_full);
  check_arg(den > 0.0, "psnr_ratio: reference PSNR must be positive");
  return num / den;
}

// Mean local SSIM, uniform 8x8 window, stride 1, K1=0.01 K2=0.03, L=1.
// Window statistics are population moments accumulated in double.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, std::size_t window = 8) {
  check_shape(a.rank() == 2 && a.same_shape(b), "ssim: expects matching (H,W) images");
  const std::size_t h = a.extent(0), w = a.extent(1);
  check_arg(window >= 1 && h >= window && w >= window,
            "ssim: image smaller than window");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + window <= h; ++y) {
    for (std::size_t x = 0; x + window <= w; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t dy = 0; dy < window; ++dy) {
        for (std::size_t dx = 0; dx < window; ++dx) {
          double va = a.at(y + dy, x + dx);
          double vb = b.at(y + dy, x + dx);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const double mu_a = sa / n, mu_b = sb / n;
      const double var_a = saa / n - mu_a * mu_a;
      const double var_b = sbb / n - mu_b * mu_b;
      const double cov = sab / n - mu_a * mu_b;
      const double num = (2 * mu_a * mu_b + c1) * (2 * cov + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Mean absolute error between prediction and ground-truth sequences.
inline double mae(const std::vector<double>& preds, const std::vector<double>& gts) {
  check_arg(!preds.empty() && preds.size() == gts.size(),
            "mae: sequences must be equal-length and nonempty");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - gts[i]);
  return acc / static_cast<double>(preds.size());
}

}  // namespace waveopt
