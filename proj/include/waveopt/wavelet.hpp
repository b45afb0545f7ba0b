#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "waveopt/tensor.hpp"

namespace waveopt {

// Single-level orthonormal 2D Haar decomposition of a (H,W) luminance image.
// Per 2x2 block (a b / c d):
//   LL=(a+b+c+d)/2, LH=(a-b+c-d)/2, HL=(a+b-c-d)/2, HH=(a-b-c+d)/2
// The basis is orthonormal, so energies are conserved exactly.
template <typename T>
struct Subbands {
  Tensor<T> ll, lh, hl, hh;
};

template <typename T>
Subbands<T> haar_dwt(const Tensor<T>& image) {
  check_shape(image.rank() == 2, "haar_dwt expects a (H,W) image");
  const std::size_t h = image.extent(0), w = image.extent(1);
  check_shape(h % 2 == 0 && w % 2 == 0,
              "haar_dwt: odd dimension " + shape_str(image.shape()));
  Subbands<T> s{Tensor<T>({h / 2, w / 2}), Tensor<T>({h / 2, w / 2}),
                Tensor<T>({h / 2, w / 2}), Tensor<T>({h / 2, w / 2})};
  for (std::size_t y = 0; y < h / 2; ++y) {
    for (std::size_t x = 0; x < w / 2; ++x) {
      const T a = image.at(2 * y, 2 * x);
      const T b = image.at(2 * y, 2 * x + 1);
      const T c = image.at(2 * y + 1, 2 * x);
      const T d = image.at(2 * y + 1, 2 * x + 1);
      s.ll.at(y, x) = (a + b + c + d) / T(2);
      s.lh.at(y, x) = (a - b + c - d) / T(2);
      s.hl.at(y, x) = (a + b - c - d) / T(2);
      s.hh.at(y, x) = (a - b - c + d) / T(2);
    }
  }
  return s;
}

template <typename T>
void check_subband_shapes(const Subbands<T>& s) {
  check_shape(s.ll.rank() == 2 && s.ll.same_shape(s.lh) && s.ll.same_shape(s.hl) &&
                  s.ll.same_shape(s.hh),
              "subbands must share one (H/2,W/2) shape");
}

template <typename T>
Tensor<T> haar_idwt(const Subbands<T>& s) {
  check_subband_shapes(s);
  const std::size_t h2 = s.ll.extent(0), w2 = s.ll.extent(1);
  Tensor<T> out({2 * h2, 2 * w2});
  for (std::size_t y = 0; y < h2; ++y) {
    for (std::size_t x = 0; x < w2; ++x) {
      const T ll = s.ll.at(y, x), lh = s.lh.at(y, x);
      const T hl = s.hl.at(y, x), hh = s.hh.at(y, x);
      out.at(2 * y, 2 * x) = (ll + lh + hl + hh) / T(2);
      out.at(2 * y, 2 * x + 1) = (ll - lh + hl - hh) / T(2);
      out.at(2 * y + 1, 2 * x) = (ll + lh - hl - hh) / T(2);
      out.at(2 * y + 1, 2 * x + 1) = (ll - lh - hl + hh) / T(2);
    }
  }
  return out;
}

// Elementwise mean of the three detail subbands.
template <typename T>
Tensor<T> subband_sum(const Subbands<T>& s) {
  check_subband_shapes(s);
  Tensor<T> out(s.lh.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = (s.lh[i] + s.hl[i] + s.hh[i]) / T(3);
  return out;
}

// Sum of squared entries, 64-bit accumulation.
template <typename T>
double energy(const Tensor<T>& x) {
  return sum_squares(x);
}

namespace clahe {

// Clipped-histogram CDF remap for one tile. Real-valued counts; the clip
// limit is `clip` times the mean bin height, excess redistributed uniformly.
// Mapping: (cdf - cdf_min) / (N - cdf_min); degenerate tiles fall back to
// bin-center identity.
inline std::vector<double> tile_mapping(const std::vector<double>& hist, double clip) {
  const std::size_t bins = hist.size();
  double total = 0.0;
  for (double h : hist) total += h;
  std::vector<double> clipped(bins);
  if (total <= 0.0) {
    for (std::size_t b = 0; b < bins; ++b)
      clipped[b] = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
    return clipped;
  }
  const double limit = clip * total / static_cast<double>(bins);
  double excess = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    double v = std::min(hist[b], limit);
    excess += hist[b] - v;
    clipped[b] = v;
  }
  const double add = excess / static_cast<double>(bins);
  double cdf = 0.0, cdf_min = -1.0;
  std::vector<double> map(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    clipped[b] += add;
    cdf += clipped[b];
    if (cdf_min < 0.0 && cdf > 0.0) cdf_min = cdf;
    map[b] = cdf;
  }
  const double denom = total - cdf_min;
  for (std::size_t b = 0; b < bins; ++b) {
    if (denom > 1e-12)
      map[b] = std::clamp((map[b] - cdf_min) / denom, 0.0, 1.0);
    else
      map[b] = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
  }
  return map;
}

inline std::size_t bin_of(double v, std::size_t bins) {
  long b = static_cast<long>(v * static_cast<double>(bins));
  return static_cast<std::size_t>(std::clamp<long>(b, 0, static_cast<long>(bins) - 1));
}

}  // namespace clahe

// Contrast-limited adaptive histogram equalization on a [0,1] image.
// Tiles of `tile` x `tile` pixels (edges reflect-padded up to a multiple),
// per-tile clipped CDF remap, bilinear blending between neighbouring tile
// mappings. Output stays in [0,1].
template <typename T>
Tensor<T> adaptive_hist_eq(const Tensor<T>& image, std::size_t tile = 8,
                           double clip = 2.0, std::size_t bins = 64) {
  check_shape(image.rank() == 2, "adaptive_hist_eq expects a (H,W) image");
  check_arg(tile >= 1, "adaptive_hist_eq: tile must be positive");
  const std::size_t h = image.extent(0), w = image.extent(1);
  check_arg(tile <= h && tile <= w,
            "adaptive_hist_eq: tile larger than image " + shape_str(image.shape()));
  check_arg(clip > 0, "adaptive_hist_eq: clip must be positive");

  // reflect-pad to tile multiples
  const std::size_t ph = (h + tile - 1) / tile * tile;
  const std::size_t pw = (w + tile - 1) / tile * tile;
  auto reflect = [](std::size_t i, std::size_t n) {
    return i < n ? i : 2 * n - 2 - i;  // pad is < n, single reflection suffices
  };
  const std::size_t ty = ph / tile, tx = pw / tile;

  // per-tile mappings
  std::vector<std::vector<double>> maps(ty * tx);
  for (std::size_t gy = 0; gy < ty; ++gy) {
    for (std::size_t gx = 0; gx < tx; ++gx) {
      std::vector<double> hist(bins, 0.0);
      for (std::size_t y = 0; y < tile; ++y) {
        for (std::size_t x = 0; x < tile; ++x) {
          const std::size_t sy = reflect(gy * tile + y, h);
          const std::size_t sx = reflect(gx * tile + x, w);
          hist[clahe::bin_of(static_cast<double>(image.at(sy, sx)), bins)] += 1.0;
        }
      }
      maps[gy * tx + gx] = clahe::tile_mapping(hist, clip);
    }
  }

  // bilinear blend between the four surrounding tile centers
  Tensor<T> out({h, w});
  const double tile_d = static_cast<double>(tile);
  for (std::size_t y = 0; y < h; ++y) {
    const double cy = (static_cast<double>(y) + 0.5) / tile_d - 0.5;
    const long gy0 = std::clamp<long>(static_cast<long>(std::floor(cy)), 0,
                                      static_cast<long>(ty) - 1);
    const long gy1 = std::min<long>(gy0 + 1, static_cast<long>(ty) - 1);
    const double fy = std::clamp(cy - static_cast<double>(gy0), 0.0, 1.0);
    for (std::size_t x = 0; x < w; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) / tile_d - 0.5;
      const long gx0 = std::clamp<long>(static_cast<long>(std::floor(cx)), 0,
                                        static_cast<long>(tx) - 1);
      const long gx1 = std::min<long>(gx0 + 1, static_cast<long>(tx) - 1);
      const double fx = std::clamp(cx - static_cast<double>(gx0), 0.0, 1.0);
      const std::size_t b = clahe::bin_of(static_cast<double>(image.at(y, x)), bins);
      const double m00 = maps[gy0 * tx + gx0][b];
      const double m01 = maps[gy0 * tx + gx1][b];
      const double m10 = maps[gy1 * tx + gx0][b];
      const double m11 = maps[gy1 * tx + gx1][b];
      const double v = (1.0 - fy) * ((1.0 - fx) * m00 + fx * m01) +
                       fy * ((1.0 - fx) * m10 + fx * m11);
      out.at(y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

// Frequency signature of one image: subbands, detail mean x_sum (raw and
// equalized), and the two energies. energy_sum always comes from the raw
// x_sum; equalization only feeds downstream consumers that want accentuated
// high-frequency detail.
template <typename T>
struct FrequencyProfile {
  Subbands<T> subbands;
  Tensor<T> x_sum;
  Tensor<T> x_sum_equalized;
  double energy_ll = 0.0;
  double energy_sum = 0.0;
};

struct EqualizeOptions {
  std::size_t tile = 8;
  double clip = 2.0;
  std::size_t bins = 64;
};

template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& x) {
  const double lo = x.min(), hi = x.max();
  Tensor<T> out(x.shape());
  if (hi - lo < 1e-12) return out;  // constant input maps to zeros
  const double s = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < x.numel(); ++i)
    out[i] = static_cast<T>((static_cast<double>(x[i]) - lo) * s);
  return out;
}

template <typename T>
FrequencyProfile<T> frequency_profile(const Tensor<T>& image,
                                      const EqualizeOptions& eq = {}) {
  check_shape(image.rank() == 2, "frequency_profile expects a (H,W) image");
  if (!image.all_finite()) throw NumericError("frequency_profile: non-finite input");
  FrequencyProfile<T> p;
  p.subbands = haar_dwt(image);
  p.x_sum = subband_sum(p.subbands);
  p.energy_ll = energy(p.subbands.ll);
  p.energy_sum = energy(p.x_sum);
  std::size_t tile = std::min({eq.tile, p.x_sum.extent(0), p.x_sum.extent(1)});
  p.x_sum_equalized = adaptive_hist_eq(minmax_normalize(p.x_sum), tile, eq.clip, eq.bins);
  return p;
}

// Rec.601 luminance for callers that hold (3,H,W) color data.
template <typename T>
Tensor<T> luminance(const Tensor<T>& rgb) {
  check_shape(rgb.rank() == 3 && rgb.extent(0) == 3, "luminance expects (3,H,W)");
  Tensor<T> out({rgb.extent(1), rgb.extent(2)});
  for (std::size_t y = 0; y < rgb.extent(1); ++y)
    for (std::size_t x = 0; x < rgb.extent(2); ++x)
      out.at(y, x) = static_cast<T>(0.299) * rgb.at(0, y, x) +
                     static_cast<T>(0.587) * rgb.at(1, y, x) +
                     static_cast<T>(0.114) * rgb.at(2, y, x);
  return out;
}

}  // namespace waveopt
