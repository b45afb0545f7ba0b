#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "waveopt/layers.hpp"
#include "waveopt/tensor.hpp"

namespace waveopt {

// Adam with bias correction. Parameters are registered once by (name, ptr);
// state is keyed by name so checkpoint reload keeps optimizer slots aligned.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options opt = {}) : opt_(opt) {}

  void register_param(const std::string& name, Tensor<T>* param) {
    params_.push_back({name, param});
    state_.emplace(name, Slot{Tensor<T>::zeros(param->shape()),
                              Tensor<T>::zeros(param->shape())});
  }

  template <typename Model>
  void register_model(Model& model) {
    model.visit_params([this](const std::string& n, Tensor<T>& t) {
      register_param(n, &t);
    });
  }

  double lr() const { return opt_.lr; }
  void set_lr(double lr) { opt_.lr = lr; }

  void step(const GradMap<T>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
    for (auto& [name, param] : params_) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Tensor<T>& g = git->second;
      Slot& s = state_.at(name);
      for (std::size_t i = 0; i < param->numel(); ++i) {
        double gi = static_cast<double>(g[i]);
        double m = opt_.beta1 * static_cast<double>(s.m[i]) + (1.0 - opt_.beta1) * gi;
        double v = opt_.beta2 * static_cast<double>(s.v[i]) + (1.0 - opt_.beta2) * gi * gi;
        s.m[i] = static_cast<T>(m);
        s.v[i] = static_cast<T>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        (*param)[i] -= static_cast<T>(opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
      }
    }
  }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  Options opt_;
  long t_ = 0;
  std::vector<std::pair<std::string, Tensor<T>*>> params_;
  std::map<std::string, Slot> state_;
};

}  // namespace waveopt
