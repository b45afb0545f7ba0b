#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "waveopt/rng.hpp"
#include "waveopt/tensor.hpp"

namespace waveopt {

// Gradients keyed by parameter name; absent key means zero gradient.
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

template <typename T>
void grad_accumulate(GradMap<T>& into, const GradMap<T>& from) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end())
      into.emplace(name, g);
    else
      it->second += g;
  }
}

// Activation record produced by forward and consumed by the matching
// backward. `owner` ties the cache to the layer that built it.
template <typename T>
struct Cache {
  const void* owner = nullptr;
  std::vector<Tensor<T>> saved;

  void expect_owner(const void* layer, const char* kind) const {
    if (owner != layer)
      throw ContractError(std::string("cache does not belong to this ") + kind +
                          " layer (stale or mismatched forward)");
  }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  // Parameter visitation order is fixed per layer; optimizers and
  // checkpoints rely on it.
  virtual void visit_params(
      const std::function<void(const std::string&, Tensor<T>&)>& fn) = 0;
  virtual Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const = 0;
  virtual Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                             GradMap<T>* grads) const = 0;

  void visit_params_const(
      const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    const_cast<Layer*>(this)->visit_params(
        [&](const std::string& n, Tensor<T>& t) { fn(n, t); });
  }
};

namespace init {

// He-style fan-in scaling.
template <typename T>
Tensor<T> conv_weight(Rng& rng, std::size_t oc, std::size_t ic, std::size_t k) {
  Tensor<T> w = rng_fill_normal<T>(rng, {oc, ic, k, k});
  T scale = static_cast<T>(std::sqrt(2.0 / static_cast<double>(ic * k * k)));
  w *= scale;
  return w;
}

template <typename T>
Tensor<T> dense_weight(Rng& rng, std::size_t out, std::size_t in) {
  Tensor<T> w = rng_fill_normal<T>(rng, {out, in});
  w *= static_cast<T>(std::sqrt(1.0 / static_cast<double>(in)));
  return w;
}

}  // namespace init

// ---------------------------------------------------------------------------
// Dense: y = W x + b, input (in) or (n, in).

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, Rng& rng)
      : name_(std::move(name)),
        w_(init::dense_weight<T>(rng, out, in)),
        b_(Tensor<T>::zeros({out})) {}

  Dense(std::string name, Tensor<T> w, Tensor<T> b)
      : name_(std::move(name)), w_(std::move(w)), b_(std::move(b)) {
    check_shape(w_.rank() == 2 && b_.rank() == 1 && b_.extent(0) == w_.extent(0),
                "dense: weight (out,in) and bias (out) disagree");
  }

  const char* kind() const override { return "dense"; }
  std::size_t in_dim() const { return w_.extent(1); }
  std::size_t out_dim() const { return w_.extent(0); }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) override {
    fn(name_ + ".w", w_);
    fn(name_ + ".b", b_);
  }

  Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const override {
    auto [n, in] = rows_cols(input);
    check_shape(in == in_dim(), "dense " + name_ + ": input width " + std::to_string(in) +
                                    " != " + std::to_string(in_dim()));
    Shape out_shape = input.rank() == 1 ? Shape{out_dim()} : Shape{n, out_dim()};
    Tensor<T> out(out_shape);
    const std::size_t od = out_dim();
    for (std::size_t r = 0; r < n; ++r) {
      const T* x = input.data() + r * in;
      T* y = out.data() + r * od;
      for (std::size_t o = 0; o < od; ++o) {
        const T* wr = w_.data() + o * in;
        T acc = b_[o];
        for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[o] = acc;
      }
    }
    if (cache) {
      cache->owner = this;
      cache->saved = {input};
    }
    return out;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                     GradMap<T>* grads) const override {
    cache.expect_owner(this, kind());
    const Tensor<T>& input = cache.saved[0];
    auto [n, in] = rows_cols(input);
    const std::size_t od = out_dim();
    check_shape(grad_out.numel() == n * od, "dense " + name_ + ": grad_out shape");

    Tensor<T> gin(input.shape());
    Tensor<T> gw = Tensor<T>::zeros(w_.shape());
    Tensor<T> gb = Tensor<T>::zeros(b_.shape());
    for (std::size_t r = 0; r < n; ++r) {
      const T* x = input.data() + r * in;
      const T* go = grad_out.data() + r * od;
      T* gx = gin.data() + r * in;
      for (std::size_t i = 0; i < in; ++i) gx[i] = T(0);
      for (std::size_t o = 0; o < od; ++o) {
        const T g = go[o];
        gb[o] += g;
        const T* wr = w_.data() + o * in;
        T* gwr = gw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          gwr[i] += g * x[i];
          gx[i] += g * wr[i];
        }
      }
    }
    if (grads) {
      grad_accumulate(*grads, GradMap<T>{{name_ + ".w", std::move(gw)},
                                         {name_ + ".b", std::move(gb)}});
    }
    return gin;
  }

 private:
  static std::pair<std::size_t, std::size_t> rows_cols(const Tensor<T>& t) {
    check_shape(t.rank() == 1 || t.rank() == 2, "dense expects rank-1 or rank-2 input");
    if (t.rank() == 1) return {1, t.extent(0)};
    return {t.extent(0), t.extent(1)};
  }

  std::string name_;
  Tensor<T> w_, b_;
};

// ---------------------------------------------------------------------------
// Conv2d: zero padding, square kernel. Input (C,H,W) -> (OC,H',W').

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, std::size_t ic, std::size_t oc, std::size_t k,
         std::size_t stride, std::size_t pad, Rng& rng)
      : name_(std::move(name)),
        stride_(stride),
        pad_(pad),
        w_(init::conv_weight<T>(rng, oc, ic, k)),
        b_(Tensor<T>::zeros({oc})) {
    check_arg(stride >= 1 && k >= 1, "conv2d: bad kernel/stride");
  }

  const char* kind() const override { return "conv2d"; }
  std::size_t in_channels() const { return w_.extent(1); }
  std::size_t out_channels() const { return w_.extent(0); }
  std::size_t ksize() const { return w_.extent(2); }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) override {
    fn(name_ + ".w", w_);
    fn(name_ + ".b", b_);
  }

  Shape out_shape(const Shape& in) const {
    std::size_t h = (in[1] + 2 * pad_ - ksize()) / stride_ + 1;
    std::size_t w = (in[2] + 2 * pad_ - ksize()) / stride_ + 1;
    return {out_channels(), h, w};
  }

  Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const override {
    check_shape(input.rank() == 3 && input.extent(0) == in_channels(),
                "conv2d " + name_ + ": expected (" + std::to_string(in_channels()) +
                    ",H,W) input, got " + shape_str(input.shape()));
    check_shape(input.extent(1) + 2 * pad_ >= ksize() && input.extent(2) + 2 * pad_ >= ksize(),
                "conv2d " + name_ + ": input smaller than kernel");
    const std::size_t ic = in_channels(), oc = out_channels(), k = ksize();
    const std::size_t ih = input.extent(1), iw = input.extent(2);
    Shape os = out_shape(input.shape());
    const std::size_t oh = os[1], ow = os[2];
    Tensor<T> out(os);

    for (std::size_t o = 0; o < oc; ++o) {
      T* dst = out.data() + o * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) dst[i] = b_[o];
      for (std::size_t c = 0; c < ic; ++c) {
        const T* src = input.data() + c * ih * iw;
        const T* wk = w_.data() + (o * ic + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t y = 0; y < oh; ++y) {
            const long sy = static_cast<long>(y * stride_ + ky) - static_cast<long>(pad_);
            if (sy < 0 || sy >= static_cast<long>(ih)) continue;
            const T* row = src + sy * iw;
            T* orow = dst + y * ow;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const T wv = wk[ky * k + kx];
              const long off = static_cast<long>(kx) - static_cast<long>(pad_);
              // valid output x range for this kernel column
              std::size_t x0 = 0;
              while (x0 < ow && static_cast<long>(x0 * stride_) + off < 0) ++x0;
              std::size_t x1 = ow;
              while (x1 > x0 &&
                     static_cast<long>((x1 - 1) * stride_) + off >= static_cast<long>(iw))
                --x1;
              if (stride_ == 1) {
                const T* in_row = row + off;
                for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * in_row[x];
              } else {
                for (std::size_t x = x0; x < x1; ++x)
                  orow[x] += wv * row[x * stride_ + off];
              }
            }
          }
        }
      }
    }
    if (cache) {
      cache->owner = this;
      cache->saved = {input};
    }
    return out;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                     GradMap<T>* grads) const override {
    cache.expect_owner(this, kind());
    const Tensor<T>& input = cache.saved[0];
    Shape os = out_shape(input.shape());
    check_shape(grad_out.shape() == os, "conv2d " + name_ + ": grad_out shape");
    const std::size_t ic = in_channels(), oc = out_channels(), k = ksize();
    const std::size_t ih = input.extent(1), iw = input.extent(2);
    const std::size_t oh = os[1], ow = os[2];

    Tensor<T> gin = Tensor<T>::zeros(input.shape());
    Tensor<T> gw = Tensor<T>::zeros(w_.shape());
    Tensor<T> gb = Tensor<T>::zeros(b_.shape());

    for (std::size_t o = 0; o < oc; ++o) {
      const T* go = grad_out.data() + o * oh * ow;
      double bacc = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) bacc += static_cast<double>(go[i]);
      gb[o] = static_cast<T>(bacc);
      for (std::size_t c = 0; c < ic; ++c) {
        const T* src = input.data() + c * ih * iw;
        T* gsrc = gin.data() + c * ih * iw;
        const T* wk = w_.data() + (o * ic + c) * k * k;
        T* gwk = gw.data() + (o * ic + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t y = 0; y < oh; ++y) {
            const long sy = static_cast<long>(y * stride_ + ky) - static_cast<long>(pad_);
            if (sy < 0 || sy >= static_cast<long>(ih)) continue;
            const T* row = src + sy * iw;
            T* grow = gsrc + sy * iw;
            const T* gorow = go + y * ow;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long off = static_cast<long>(kx) - static_cast<long>(pad_);
              std::size_t x0 = 0;
              while (x0 < ow && static_cast<long>(x0 * stride_) + off < 0) ++x0;
              std::size_t x1 = ow;
              while (x1 > x0 &&
                     static_cast<long>((x1 - 1) * stride_) + off >= static_cast<long>(iw))
                --x1;
              const T wv = wk[ky * k + kx];
              T wg = T(0);
              for (std::size_t x = x0; x < x1; ++x) {
                const std::size_t sx = x * stride_ + off;
                wg += gorow[x] * row[sx];
                grow[sx] += gorow[x] * wv;
              }
              gwk[ky * k + kx] += wg;
            }
          }
        }
      }
    }
    if (grads) {
      grad_accumulate(*grads, GradMap<T>{{name_ + ".w", std::move(gw)},
                                         {name_ + ".b", std::move(gb)}});
    }
    return gin;
  }

 private:
  std::string name_;
  std::size_t stride_, pad_;
  Tensor<T> w_, b_;
};

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

enum class Act { Relu, Tanh, Silu };

template <typename T>
class Nonlinearity final : public Layer<T> {
 public:
  explicit Nonlinearity(Act act) : act_(act) {}

  const char* kind() const override { return "nonlinearity"; }
  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>&) override {}

  Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const override {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = apply(input[i]);
    if (cache) {
      cache->owner = this;
      cache->saved = {input};
    }
    return out;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                     GradMap<T>*) const override {
    cache.expect_owner(this, kind());
    const Tensor<T>& input = cache.saved[0];
    check_shape(grad_out.same_shape(input), "nonlinearity: grad_out shape");
    Tensor<T> gin(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i)
      gin[i] = grad_out[i] * derivative(input[i]);
    return gin;
  }

 private:
  T apply(T x) const {
    switch (act_) {
      case Act::Relu: return x > T(0) ? x : T(0);
      case Act::Tanh: return std::tanh(x);
      case Act::Silu: return x / (T(1) + std::exp(-x));
    }
    return x;
  }
  T derivative(T x) const {
    switch (act_) {
      case Act::Relu: return x > T(0) ? T(1) : T(0);
      case Act::Tanh: {
        T t = std::tanh(x);
        return T(1) - t * t;
      }
      case Act::Silu: {
        T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      }
    }
    return T(1);
  }

  Act act_;
};

// ---------------------------------------------------------------------------
// LayerNorm over the last axis, learned gain/shift.

template <typename T>
class LayerNorm final : public Layer<T> {
 public:
  LayerNorm(std::string name, std::size_t dim, T eps = T(1e-5))
      : name_(std::move(name)),
        eps_(eps),
        gamma_(Tensor<T>::full({dim}, T(1))),
        beta_(Tensor<T>::zeros({dim})) {}

  const char* kind() const override { return "normalization"; }
  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) override {
    fn(name_ + ".gamma", gamma_);
    fn(name_ + ".beta", beta_);
  }

  Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const override {
    const std::size_t d = gamma_.extent(0);
    check_shape(input.rank() >= 1 && input.extent(input.rank() - 1) == d,
                "layernorm " + name_ + ": last axis must be " + std::to_string(d));
    const std::size_t rows = input.numel() / d;
    Tensor<T> out(input.shape());
    Tensor<T> stats({rows, 2});  // mean, inv_std per row
    for (std::size_t r = 0; r < rows; ++r) {
      const T* x = input.data() + r * d;
      double m = 0.0;
      for (std::size_t i = 0; i < d; ++i) m += static_cast<double>(x[i]);
      m /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        double c = static_cast<double>(x[i]) - m;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double inv = 1.0 / std::sqrt(var + static_cast<double>(eps_));
      stats.at(r, 0) = static_cast<T>(m);
      stats.at(r, 1) = static_cast<T>(inv);
      T* y = out.data() + r * d;
      for (std::size_t i = 0; i < d; ++i)
        y[i] = gamma_[i] * static_cast<T>((static_cast<double>(x[i]) - m) * inv) + beta_[i];
    }
    if (cache) {
      cache->owner = this;
      cache->saved = {input, stats};
    }
    return out;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                     GradMap<T>* grads) const override {
    cache.expect_owner(this, kind());
    const Tensor<T>& input = cache.saved[0];
    const Tensor<T>& stats = cache.saved[1];
    check_shape(grad_out.same_shape(input), "layernorm: grad_out shape");
    const std::size_t d = gamma_.extent(0);
    const std::size_t rows = input.numel() / d;
    Tensor<T> gin(input.shape());
    Tensor<T> ggamma = Tensor<T>::zeros({d});
    Tensor<T> gbeta = Tensor<T>::zeros({d});
    for (std::size_t r = 0; r < rows; ++r) {
      const T* x = input.data() + r * d;
      const T* go = grad_out.data() + r * d;
      T* gx = gin.data() + r * d;
      const double m = stats.at(r, 0), inv = stats.at(r, 1);
      double sum_g = 0.0, sum_gx = 0.0;  // sums of gamma*go and gamma*go*xhat
      for (std::size_t i = 0; i < d; ++i) {
        double xhat = (static_cast<double>(x[i]) - m) * inv;
        double g = static_cast<double>(go[i]) * static_cast<double>(gamma_[i]);
        sum_g += g;
        sum_gx += g * xhat;
        ggamma[i] += static_cast<T>(static_cast<double>(go[i]) * xhat);
        gbeta[i] += go[i];
      }
      const double dn = static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) {
        double xhat = (static_cast<double>(x[i]) - m) * inv;
        double g = static_cast<double>(go[i]) * static_cast<double>(gamma_[i]);
        gx[i] = static_cast<T>(inv * (g - sum_g / dn - xhat * sum_gx / dn));
      }
    }
    if (grads) {
      grad_accumulate(*grads, GradMap<T>{{name_ + ".gamma", std::move(ggamma)},
                                         {name_ + ".beta", std::move(gbeta)}});
    }
    return gin;
  }

 private:
  std::string name_;
  T eps_;
  Tensor<T> gamma_, beta_;
};

// ---------------------------------------------------------------------------
// Embedding table. Forward input: rank-1 tensor of ids (stored as T values);
// output (n, d). Row 0 is the null token by library convention.

template <typename T>
class EmbeddingTable final : public Layer<T> {
 public:
  EmbeddingTable(std::string name, std::size_t vocab, std::size_t dim, Rng& rng)
      : name_(std::move(name)), table_(rng_fill_normal<T>(rng, {vocab, dim})) {
    table_ *= static_cast<T>(0.5);
  }

  const char* kind() const override { return "embedding-table"; }
  std::size_t vocab() const { return table_.extent(0); }
  std::size_t dim() const { return table_.extent(1); }
  Tensor<T>& table() { return table_; }
  const Tensor<T>& table() const { return table_; }

  Tensor<T> row(std::size_t id) const {
    check_arg(id < vocab(), "embedding id " + std::to_string(id) + " out of range");
    std::vector<T> v(table_.data() + id * dim(), table_.data() + (id + 1) * dim());
    return Tensor<T>({dim()}, std::move(v));
  }

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) override {
    fn(name_ + ".table", table_);
  }

  Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const override {
    check_shape(input.rank() == 1, "embedding-table expects rank-1 id tensor");
    const std::size_t n = input.extent(0), d = dim();
    Tensor<T> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      auto id = static_cast<std::size_t>(input[i]);
      check_arg(id < vocab(), "embedding id out of range");
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) = table_.at(id, j);
    }
    if (cache) {
      cache->owner = this;
      cache->saved = {input};
    }
    return out;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                     GradMap<T>* grads) const override {
    cache.expect_owner(this, kind());
    const Tensor<T>& ids = cache.saved[0];
    const std::size_t n = ids.extent(0), d = dim();
    check_shape(grad_out.rank() == 2 && grad_out.extent(0) == n && grad_out.extent(1) == d,
                "embedding-table: grad_out shape");
    Tensor<T> gt = Tensor<T>::zeros(table_.shape());
    for (std::size_t i = 0; i < n; ++i) {
      auto id = static_cast<std::size_t>(ids[i]);
      for (std::size_t j = 0; j < d; ++j) gt.at(id, j) += grad_out.at(i, j);
    }
    if (grads) grad_accumulate(*grads, GradMap<T>{{name_ + ".table", std::move(gt)}});
    // ids carry no gradient
    return Tensor<T>::zeros(ids.shape());
  }

 private:
  std::string name_;
  Tensor<T> table_;
};

// ---------------------------------------------------------------------------
// Scaled dot-product multi-head attention. Q source (nq, dq), KV source
// (nk, dk); all projections map into heads*head_dim. Layer::forward runs
// self-attention (input is both Q and KV source).

template <typename T>
class MultiHeadAttention final : public Layer<T> {
 public:
  MultiHeadAttention(std::string name, std::size_t dq, std::size_t dk,
                     std::size_t heads, std::size_t head_dim, Rng& rng)
      : name_(std::move(name)),
        heads_(heads),
        head_dim_(head_dim),
        wq_(name_ + ".q", dq, heads * head_dim, rng),
        wk_(name_ + ".k", dk, heads * head_dim, rng),
        wv_(name_ + ".v", dk, heads * head_dim, rng),
        wo_(name_ + ".o", heads * head_dim, heads * head_dim, rng) {}

  const char* kind() const override { return "attention"; }
  std::size_t model_dim() const { return heads_ * head_dim_; }

  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) override {
    wq_.visit_params(fn);
    wk_.visit_params(fn);
    wv_.visit_params(fn);
    wo_.visit_params(fn);
  }

  // Attention weights for inspection: (heads, nq, nk) from the last forward's
  // cache.
  static const Tensor<T>& cached_weights(const Cache<T>& cache) { return cache.saved[4]; }

  Tensor<T> forward(const Tensor<T>& input, Cache<T>* cache = nullptr) const override {
    return attend(input, input, cache);
  }

  Tensor<T> attend(const Tensor<T>& q_src, const Tensor<T>& kv_src,
                   Cache<T>* cache = nullptr) const {
    check_shape(q_src.rank() == 2 && kv_src.rank() == 2,
                "attention expects (tokens, dim) inputs");
    const std::size_t nq = q_src.extent(0), nk = kv_src.extent(0);
    const std::size_t hd = head_dim_, dm = model_dim();

    Tensor<T> q = wq_.forward(q_src);  // (nq, dm)
    Tensor<T> k = wk_.forward(kv_src);
    Tensor<T> v = wv_.forward(kv_src);

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Tensor<T> attn({heads_, nq, nk});
    Tensor<T> ctx({nq, dm});
    for (std::size_t h = 0; h < heads_; ++h) {
      for (std::size_t i = 0; i < nq; ++i) {
        const T* qi = q.data() + i * dm + h * hd;
        // logits and row softmax, 64-bit accumulation
        std::vector<double> logits(nk);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          const T* kj = k.data() + j * dm + h * hd;
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c)
            acc += static_cast<double>(qi[c]) * static_cast<double>(kj[c]);
          logits[j] = acc * scale;
          mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          z += logits[j];
        }
        T* arow = attn.data() + (h * nq + i) * nk;
        for (std::size_t j = 0; j < nk; ++j) arow[j] = static_cast<T>(logits[j] / z);
        T* crow = ctx.data() + i * dm + h * hd;
        for (std::size_t c = 0; c < hd; ++c) crow[c] = T(0);
        for (std::size_t j = 0; j < nk; ++j) {
          const T a = arow[j];
          const T* vj = v.data() + j * dm + h * hd;
          for (std::size_t c = 0; c < hd; ++c) crow[c] += a * vj[c];
        }
      }
    }
    Tensor<T> out = wo_.forward(ctx);
    if (cache) {
      cache->owner = this;
      cache->saved = {q, k, v, ctx, attn, q_src, kv_src};
    }
    return out;
  }

  // grad wrt q_src returned; grad wrt kv_src written to *grad_kv if given.
  Tensor<T> backward_attend(const Cache<T>& cache, const Tensor<T>& grad_out,
                            GradMap<T>* grads, Tensor<T>* grad_kv) const {
    cache.expect_owner(this, kind());
    const Tensor<T>& q = cache.saved[0];
    const Tensor<T>& k = cache.saved[1];
    const Tensor<T>& v = cache.saved[2];
    const Tensor<T>& ctx = cache.saved[3];
    const Tensor<T>& attn = cache.saved[4];
    const Tensor<T>& q_src = cache.saved[5];
    const Tensor<T>& kv_src = cache.saved[6];
    // dense sub-caches hold only their inputs; rebuild them here
    Cache<T> cq{&wq_, {q_src}}, ck{&wk_, {kv_src}}, cv{&wv_, {kv_src}}, co{&wo_, {ctx}};

    const std::size_t nq = q.extent(0), nk = k.extent(0);
    const std::size_t hd = head_dim_, dm = model_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor<T> gctx = wo_.backward(co, grad_out, grads);  // (nq, dm)
    Tensor<T> gq = Tensor<T>::zeros(q.shape());
    Tensor<T> gk = Tensor<T>::zeros(k.shape());
    Tensor<T> gv = Tensor<T>::zeros(v.shape());

    for (std::size_t h = 0; h < heads_; ++h) {
      for (std::size_t i = 0; i < nq; ++i) {
        const T* arow = attn.data() + (h * nq + i) * nk;
        const T* gc = gctx.data() + i * dm + h * hd;
        // dv and d(attn)
        std::vector<double> da(nk, 0.0);
        for (std::size_t j = 0; j < nk; ++j) {
          const T* vj = v.data() + j * dm + h * hd;
          T* gvj = gv.data() + j * dm + h * hd;
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            acc += static_cast<double>(gc[c]) * static_cast<double>(vj[c]);
            gvj[c] += arow[j] * gc[c];
          }
          da[j] = acc;
        }
        // softmax backward: dl_j = a_j (da_j - sum_m a_m da_m)
        double dot_ada = 0.0;
        for (std::size_t j = 0; j < nk; ++j) dot_ada += static_cast<double>(arow[j]) * da[j];
        const T* qi = q.data() + i * dm + h * hd;
        T* gqi = gq.data() + i * dm + h * hd;
        for (std::size_t j = 0; j < nk; ++j) {
          double dl = static_cast<double>(arow[j]) * (da[j] - dot_ada) * scale;
          const T* kj = k.data() + j * dm + h * hd;
          T* gkj = gk.data() + j * dm + h * hd;
          for (std::size_t c = 0; c < hd; ++c) {
            gqi[c] += static_cast<T>(dl * static_cast<double>(kj[c]));
            gkj[c] += static_cast<T>(dl * static_cast<double>(qi[c]));
          }
        }
      }
    }

    Tensor<T> gq_src = wq_.backward(cq, gq, grads);
    Tensor<T> gk_src = wk_.backward(ck, gk, grads);
    Tensor<T> gv_src = wv_.backward(cv, gv, grads);
    if (grad_kv) {
      *grad_kv = gk_src;
      *grad_kv += gv_src;
    }
    return gq_src;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                     GradMap<T>* grads) const override {
    Tensor<T> gkv;
    Tensor<T> gq = backward_attend(cache, grad_out, grads, &gkv);
    gq += gkv;  // self-attention: same source tensor
    return gq;
  }

 private:
  std::string name_;
  std::size_t heads_, head_dim_;
  Dense<T> wq_, wk_, wv_, wo_;
};

}  // namespace waveopt
