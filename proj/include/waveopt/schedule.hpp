#pragma once

#include <cstddef>
#include <vector>

#include "waveopt/common.hpp"

namespace waveopt {

// DDPM-style variance schedule plus the coarse sampling grid. alpha_bars is
// indexed by training step with alpha_bars[0] == 1 (the t = 0 convention);
// sample_grid maps sampling indices 1..T onto training steps, strictly
// increasing and ending at t_train.
struct NoiseSchedule {
  std::size_t t_train = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> betas;       // t_train entries
  std::vector<double> alpha_bars;  // t_train + 1 entries
  std::vector<std::size_t> sample_grid;  // T entries

  std::size_t T() const { return sample_grid.size(); }

  // training step for sampling index k in [0, T]; k = 0 is the clean level
  std::size_t train_step(std::size_t k) const {
    check_arg(k <= T(), "sampling index out of range");
    return k == 0 ? 0 : sample_grid[k - 1];
  }

  double abar_at(std::size_t k) const { return alpha_bars[train_step(k)]; }
};

inline NoiseSchedule make_schedule(std::size_t t_train = 1000, double beta_min = 1e-4,
                                   double beta_max = 0.02, std::size_t T = 50) {
  check_arg(t_train >= 1, "make_schedule: t_train must be positive");
  check_arg(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0,
            "make_schedule: need 0 < beta_min < beta_max < 1");
  check_arg(T >= 1 && T <= t_train, "make_schedule: need 1 <= T <= t_train");

  NoiseSchedule s;
  s.t_train = t_train;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.betas.resize(t_train);
  for (std::size_t i = 0; i < t_train; ++i) {
    double frac = t_train == 1 ? 0.0
                               : static_cast<double>(i) / static_cast<double>(t_train - 1);
    s.betas[i] = beta_min + (beta_max - beta_min) * frac;
  }
  s.alpha_bars.resize(t_train + 1);
  s.alpha_bars[0] = 1.0;
  for (std::size_t t = 1; t <= t_train; ++t)
    s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t - 1]);

  s.sample_grid.resize(T);
  for (std::size_t k = 0; k < T; ++k) s.sample_grid[k] = (k + 1) * t_train / T;
  s.sample_grid.back() = t_train;
  for (std::size_t k = 1; k < T; ++k)
    check_arg(s.sample_grid[k] > s.sample_grid[k - 1],
              "make_schedule: sample grid not strictly increasing");
  return s;
}

}  // namespace waveopt
