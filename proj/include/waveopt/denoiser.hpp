#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "waveopt/layers.hpp"
#include "waveopt/rng.hpp"
#include "waveopt/schedule.hpp"
#include "waveopt/tensor.hpp"

namespace waveopt {

// Sinusoidal timestep features, sin halves then cos halves.
template <typename T>
Tensor<T> sinusoidal_embedding(std::size_t t, std::size_t width) {
  check_arg(width >= 2 && width % 2 == 0, "sinusoidal embedding width must be even");
  const std::size_t half = width / 2;
  Tensor<T> out({width});
  for (std::size_t i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                           static_cast<double>(half));
    double arg = static_cast<double>(t) * freq;
    out[i] = static_cast<T>(std::sin(arg));
    out[half + i] = static_cast<T>(std::cos(arg));
  }
  return out;
}

struct DenoiserConfig {
  std::size_t width = 32;       // hidden channels
  std::size_t hidden = 3;       // hidden conv layers
  std::size_t d_embed = 32;     // conditioning embedding width
  std::size_t time_width = 32;  // sinusoidal feature width
  std::size_t kernel = 3;
};

// Epsilon-predicting conv net. The conditioning embedding is broadcast over
// space and concatenated to the latent channel; timestep features enter as a
// per-channel bias after the first conv. Output shape equals input shape.
template <typename T>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    check_arg(cfg.hidden >= 1, "denoiser needs at least one hidden layer");
    const std::size_t k = cfg.kernel, pad = cfg.kernel / 2;
    convs_.emplace_back(std::make_unique<Conv2d<T>>("denoiser.conv0", 1 + cfg.d_embed,
                                                    cfg.width, k, 1, pad, rng));
    for (std::size_t i = 1; i < cfg.hidden; ++i)
      convs_.emplace_back(std::make_unique<Conv2d<T>>(
          "denoiser.conv" + std::to_string(i), cfg.width, cfg.width, k, 1, pad, rng));
    out_conv_ = std::make_unique<Conv2d<T>>("denoiser.out", cfg.width, 1, k, 1, pad, rng);
    time_proj_ = std::make_unique<Dense<T>>("denoiser.time", cfg.time_width, cfg.width, rng);
  }

  const DenoiserConfig& config() const { return cfg_; }

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (auto& c : convs_) c->visit_params(fn);
    out_conv_->visit_params(fn);
    time_proj_->visit_params(fn);
  }
  void visit_params_const(
      const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    auto* self = const_cast<Denoiser*>(this);
    self->visit_params([&](const std::string& n, Tensor<T>& t) { fn(n, t); });
  }

  struct FwdCache {
    std::vector<Cache<T>> conv_caches;
    std::vector<Cache<T>> act_caches;
    Cache<T> out_cache;
    Cache<T> time_cache;
    Shape z_shape;
  };

  // z: (H,W), cond: (d_embed). Returns the epsilon estimate, (H,W).
  Tensor<T> predict(const Tensor<T>& z, std::size_t train_t, const Tensor<T>& cond,
                    FwdCache* cache = nullptr) const {
    check_shape(z.rank() == 2, "denoiser expects a (H,W) latent");
    check_shape(cond.rank() == 1 && cond.extent(0) == cfg_.d_embed,
                "denoiser: conditioning width must be " + std::to_string(cfg_.d_embed));
    const std::size_t h = z.extent(0), w = z.extent(1);

    // channel stack: latent, then broadcast conditioning
    Tensor<T> x({1 + cfg_.d_embed, h, w});
    for (std::size_t i = 0; i < h * w; ++i) x[i] = z[i];
    for (std::size_t c = 0; c < cfg_.d_embed; ++c) {
      T* dst = x.data() + (1 + c) * h * w;
      const T v = cond[c];
      for (std::size_t i = 0; i < h * w; ++i) dst[i] = v;
    }

    FwdCache local;
    FwdCache& fc = cache ? *cache : local;
    fc.conv_caches.resize(convs_.size());
    fc.act_caches.resize(convs_.size());
    fc.z_shape = z.shape();

    Tensor<T> temb = sinusoidal_embedding<T>(train_t, cfg_.time_width);
    Tensor<T> tbias = time_proj_->forward(temb, cache ? &fc.time_cache : nullptr);

    Tensor<T> hcur = convs_[0]->forward(x, cache ? &fc.conv_caches[0] : nullptr);
    for (std::size_t c = 0; c < cfg_.width; ++c) {
      T* dst = hcur.data() + c * h * w;
      const T v = tbias[c];
      for (std::size_t i = 0; i < h * w; ++i) dst[i] += v;
    }
    hcur = act_.forward(hcur, cache ? &fc.act_caches[0] : nullptr);
    for (std::size_t l = 1; l < convs_.size(); ++l) {
      hcur = convs_[l]->forward(hcur, cache ? &fc.conv_caches[l] : nullptr);
      hcur = act_.forward(hcur, cache ? &fc.act_caches[l] : nullptr);
    }
    Tensor<T> out = out_conv_->forward(hcur, cache ? &fc.out_cache : nullptr);
    return out.reshaped({h, w});
  }

  // Backward from grad wrt the epsilon output. Fills parameter grads and/or
  // the gradient wrt the conditioning vector.
  void backward(const FwdCache& cache, const Tensor<T>& grad_out, GradMap<T>* grads,
                Tensor<T>* grad_cond = nullptr) const {
    const std::size_t h = cache.z_shape[0], w = cache.z_shape[1];
    check_shape(grad_out.numel() == h * w, "denoiser backward: grad shape");
    Tensor<T> g = grad_out.reshaped({1, h, w});
    g = out_conv_->backward(cache.out_cache, g, grads);
    for (std::size_t l = convs_.size(); l-- > 1;) {
      g = act_.backward(cache.act_caches[l], g, nullptr);
      g = convs_[l]->backward(cache.conv_caches[l], g, grads);
    }
    g = act_.backward(cache.act_caches[0], g, nullptr);
    // time bias: gradient is the per-channel spatial sum
    if (grads) {
      Tensor<T> gt({cfg_.width});
      for (std::size_t c = 0; c < cfg_.width; ++c) {
        double acc = 0.0;
        const T* src = g.data() + c * h * w;
        for (std::size_t i = 0; i < h * w; ++i) acc += static_cast<double>(src[i]);
        gt[c] = static_cast<T>(acc);
      }
      time_proj_->backward(cache.time_cache, gt, grads);
    }
    g = convs_[0]->backward(cache.conv_caches[0], g, grads);
    if (grad_cond) {
      Tensor<T> gc({cfg_.d_embed});
      for (std::size_t c = 0; c < cfg_.d_embed; ++c) {
        double acc = 0.0;
        const T* src = g.data() + (1 + c) * h * w;
        for (std::size_t i = 0; i < h * w; ++i) acc += static_cast<double>(src[i]);
        gc[c] = static_cast<T>(acc);
      }
      *grad_cond = std::move(gc);
    }
  }

 private:
  DenoiserConfig cfg_;
  std::vector<std::unique_ptr<Conv2d<T>>> convs_;
  std::unique_ptr<Conv2d<T>> out_conv_;
  std::unique_ptr<Dense<T>> time_proj_;
  Nonlinearity<T> act_{Act::Silu};
};

// A prompt is a short token-id sequence over a small vocabulary; id 0 is the
// null token. The conditioning vector is the mean of the token rows.
template <typename T>
struct PromptEmbedding {
  std::vector<std::size_t> token_ids;
  Tensor<T> embedding;  // (d_embed)
};

template <typename T>
PromptEmbedding<T> embed_prompt(const EmbeddingTable<T>& table,
                                const std::vector<std::size_t>& ids) {
  check_arg(!ids.empty(), "prompt needs at least one token");
  Tensor<T> acc = Tensor<T>::zeros({table.dim()});
  for (auto id : ids) acc += table.row(id);
  acc *= static_cast<T>(1.0 / static_cast<double>(ids.size()));
  return PromptEmbedding<T>{ids, std::move(acc)};
}

template <typename T>
PromptEmbedding<T> null_prompt(const EmbeddingTable<T>& table) {
  return embed_prompt(table, {0});
}

// Denoiser, token table and schedule travel together.
template <typename T>
struct DiffusionModel {
  DiffusionModel(const DenoiserConfig& cfg, std::size_t vocab, NoiseSchedule sched,
                 std::uint64_t seed)
      : seed(seed),
        schedule(std::move(sched)),
        rng_init(seed),
        denoiser(cfg, rng_init),
        tokens("tokens", vocab, cfg.d_embed, rng_init) {}

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    denoiser.visit_params(fn);
    tokens.visit_params(fn);
  }

  std::uint64_t seed;
  NoiseSchedule schedule;
  Rng rng_init;  // consumed during construction
  Denoiser<T> denoiser;
  EmbeddingTable<T> tokens;
};

}  // namespace waveopt
