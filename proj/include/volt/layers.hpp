#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "volt/common.hpp"
#include "volt/gemm.hpp"
#include "volt/rng.hpp"
#include "volt/tensor.hpp"

namespace volt {

/// Named handle to one parameter vector and its gradient. `decay` marks
/// participation in weight decay (biases and batch-norm affine terms opt
/// out). Pointers stay valid for the owning layer's lifetime.
template <typename T>
struct ParamView {
  std::string name;
  std::vector<T>* value = nullptr;
  std::vector<T>* grad = nullptr;
  bool decay = true;
};

/// Non-trainable per-layer state that still belongs in a checkpoint
/// (batch-norm running statistics).
template <typename T>
struct BufferView {
  std::string name;
  std::vector<T>* value = nullptr;
};

/// How the quadratic weights start out: exactly zero (each filter begins as
/// its linear counterpart) or a scaled Gaussian with variance 2/(n * ex2),
/// ex2 being an estimate of the per-element second moment of the input.
enum class W2Init { zero, gaussian };

struct InitConfig {
  W2Init w2_init = W2Init::zero;
  double w2_ex2 = 1.0;
};

/// He initialization: zero-mean Gaussian with variance 2/fan_in.
template <typename T>
void he_fill(std::vector<T>& w, int fan_in, Rng& rng) {
  if (fan_in < 1) throw ShapeError("he_fill: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : w) v = static_cast<T>(rng.normal() * stddev);
}

/// Base class for network layers. forward/backward return references to
/// layer-owned buffers that stay valid until the next call on the same
/// layer; pass-through layers may return their argument instead.
///
/// backward receives the same `x` that forward saw (the caller keeps
/// activations alive across the pass) plus the upstream gradient `gy`, fills
/// this layer's parameter gradients, and returns dLoss/dx. When `need_dx` is
/// false the input gradient may be skipped and the returned reference is
/// unspecified.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const Tensor4<T>& forward(const Tensor4<T>& x, bool train) = 0;
  virtual const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                                     bool need_dx) = 0;
  virtual void collect_params(std::vector<ParamView<T>>& /*out*/) {}
  virtual void collect_buffers(std::vector<BufferView<T>>& /*out*/) {}
  /// Stateful per-layer generators (dropout masks), exposed so training
  /// checkpoints can capture and restore their exact position.
  virtual void collect_rngs(std::vector<Rng*>& /*out*/) {}
  virtual void init_params(Rng& /*rng*/, const InitConfig& /*cfg*/) {}
  virtual std::int64_t param_count() const { return 0; }
  virtual std::string describe() const = 0;
};

// ---------------------------------------------------------------------------
// Batch normalization

/// Per-channel batch normalization with affine transform y = gamma*xhat +
/// beta. Train mode normalizes by batch statistics (population variance) and
/// updates running stats with momentum; eval mode uses the running stats.
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(int channels, T eps = T(1e-5), T momentum = T(0.1))
      : channels_(channels), eps_(eps), momentum_(momentum) {
    if (channels < 1) throw ShapeError("batchnorm: channels must be positive");
    gamma_.assign(channels, T(1));
    beta_.assign(channels, T(0));
    ggamma_.assign(channels, T(0));
    gbeta_.assign(channels, T(0));
    running_mean_.assign(channels, T(0));
    running_var_.assign(channels, T(1));
  }

  const Tensor4<T>& forward(const Tensor4<T>& x, bool train) override {
    check_channels(x);
    out_.reshape(x.n, x.c, x.h, x.w);
    last_train_ = train;
    if (train) {
      if (x.n < 2)
        throw ShapeError("batchnorm: train mode needs batch >= 2, got " +
                         std::to_string(x.n));
      channel_mean_var(x, mean_, var_);
      const T count = static_cast<T>(static_cast<std::size_t>(x.n) * x.h * x.w);
      invstd_.resize(channels_);
      for (int c = 0; c < channels_; ++c) {
        invstd_[c] = T(1) / std::sqrt(var_[c] + eps_);
        // Running variance keeps the unbiased estimate, as is conventional;
        // normalization itself uses the population form.
        const T unbiased = var_[c] * count / (count - T(1));
        running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean_[c];
        running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * unbiased;
      }
    } else {
      mean_ = running_mean_;
      invstd_.resize(channels_);
      for (int c = 0; c < channels_; ++c)
        invstd_[c] = T(1) / std::sqrt(running_var_[c] + eps_);
    }
    apply(x, out_);
    return out_;
  }

  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    check_channels(x);
    if (!gy.same_shape(x))
      throw ShapeError("batchnorm backward: gradient shape " + gy.shape_str() +
                       " != input shape " + x.shape_str());
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const T count = static_cast<T>(static_cast<std::size_t>(x.n) * plane);
    if (need_dx) dx_.reshape(x.n, x.c, x.h, x.w);
    for (int c = 0; c < channels_; ++c) {
      const T mu = mean_[c], is = invstd_[c];
      T dg = 0, db = 0;
      for (int in = 0; in < x.n; ++in) {
        const T* xp = x.sample(in) + plane * c;
        const T* gp = gy.sample(in) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) {
          dg += gp[i] * (xp[i] - mu) * is;
          db += gp[i];
        }
      }
      ggamma_[c] = dg;
      gbeta_[c] = db;
      if (!need_dx) continue;
      if (last_train_) {
        const T k = gamma_[c] * is / count;
        for (int in = 0; in < x.n; ++in) {
          const T* xp = x.sample(in) + plane * c;
          const T* gp = gy.sample(in) + plane * c;
          T* dp = dx_.sample(in) + plane * c;
          for (std::size_t i = 0; i < plane; ++i)
            dp[i] = k * (count * gp[i] - db - (xp[i] - mu) * is * dg);
        }
      } else {
        // Eval-mode statistics are constants.
        const T k = gamma_[c] * is;
        for (int in = 0; in < x.n; ++in) {
          const T* gp = gy.sample(in) + plane * c;
          T* dp = dx_.sample(in) + plane * c;
          for (std::size_t i = 0; i < plane; ++i) dp[i] = k * gp[i];
        }
      }
    }
    return dx_;
  }

  void collect_params(std::vector<ParamView<T>>& out) override {
    out.push_back({describe() + ".gamma", &gamma_, &ggamma_, false});
    out.push_back({describe() + ".beta", &beta_, &gbeta_, false});
  }
  void collect_buffers(std::vector<BufferView<T>>& out) override {
    out.push_back({describe() + ".running_mean", &running_mean_});
    out.push_back({describe() + ".running_var", &running_var_});
  }
  void init_params(Rng& /*rng*/, const InitConfig& /*cfg*/) override {
    std::fill(gamma_.begin(), gamma_.end(), T(1));
    std::fill(beta_.begin(), beta_.end(), T(0));
    std::fill(running_mean_.begin(), running_mean_.end(), T(0));
    std::fill(running_var_.begin(), running_var_.end(), T(1));
  }
  std::int64_t param_count() const override { return 2 * channels_; }
  std::string describe() const override {
    return "batchnorm(" + std::to_string(channels_) + ")";
  }

  const std::vector<T>& running_mean() const { return running_mean_; }
  const std::vector<T>& running_var() const { return running_var_; }

 private:
  void check_channels(const Tensor4<T>& x) const {
    if (x.c != channels_)
      throw ShapeError("batchnorm: expected " + std::to_string(channels_) +
                       " channels, got " + std::to_string(x.c));
  }
  void apply(const Tensor4<T>& x, Tensor4<T>& y) const {
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int c = 0; c < channels_; ++c) {
      const T a = gamma_[c] * invstd_[c];
      const T b = beta_[c] - a * mean_[c];
      for (int in = 0; in < x.n; ++in) {
        const T* xp = x.sample(in) + plane * c;
        T* yp = y.sample(in) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) yp[i] = a * xp[i] + b;
      }
    }
  }

  int channels_;
  T eps_, momentum_;
  std::vector<T> gamma_, beta_, ggamma_, gbeta_;
  std::vector<T> running_mean_, running_var_;
  std::vector<T> mean_, var_, invstd_;
  bool last_train_ = false;
  Tensor4<T> out_, dx_;
};

// ---------------------------------------------------------------------------
// ReLU

/// max(0, x). The subgradient at exactly 0 is taken as 0 (the pass-through
/// condition is x > 0).
template <typename T>
class ReLU : public Layer<T> {
 public:
  const Tensor4<T>& forward(const Tensor4<T>& x, bool /*train*/) override {
    out_.reshape(x.n, x.c, x.h, x.w);
    const T* xp = x.data.data();
    T* yp = out_.data.data();
    const std::size_t sz = x.size();
    for (std::size_t i = 0; i < sz; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
    return out_;
  }
  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    if (!need_dx) return dx_;
    if (!gy.same_shape(x))
      throw ShapeError("relu backward: gradient shape " + gy.shape_str() +
                       " != input shape " + x.shape_str());
    dx_.reshape(x.n, x.c, x.h, x.w);
    const T* xp = x.data.data();
    const T* gp = gy.data.data();
    T* dp = dx_.data.data();
    const std::size_t sz = x.size();
    for (std::size_t i = 0; i < sz; ++i) dp[i] = xp[i] > T(0) ? gp[i] : T(0);
    return dx_;
  }
  std::string describe() const override { return "relu"; }

 private:
  Tensor4<T> out_, dx_;
};

// ---------------------------------------------------------------------------
// Average pooling

/// Non-overlapping window mean over (window_h x window_w) tiles. Feature
/// dimensions must tile exactly.
template <typename T>
void avgpool_forward(const Tensor4<T>& x, int window_h, int window_w, Tensor4<T>& out) {
  if (window_h < 1 || window_w < 1)
    throw ShapeError("avgpool: window must be positive");
  if (x.h % window_h != 0 || x.w % window_w != 0)
    throw ShapeError("avgpool: input " + x.shape_str() + " not tiled by " +
                     std::to_string(window_h) + "x" + std::to_string(window_w));
  const int oh = x.h / window_h, ow = x.w / window_w;
  out.reshape(x.n, x.c, oh, ow);
  const T inv = T(1) / static_cast<T>(window_h * window_w);
  for (int in = 0; in < x.n; ++in)
    for (int c = 0; c < x.c; ++c)
      for (int p = 0; p < oh; ++p)
        for (int q = 0; q < ow; ++q) {
          T s = 0;
          for (int dh = 0; dh < window_h; ++dh)
            for (int dw = 0; dw < window_w; ++dw)
              s += x.at(in, c, p * window_h + dh, q * window_w + dw);
          out.at(in, c, p, q) = s * inv;
        }
}

/// Adjoint of avgpool_forward: each input cell receives its window's
/// upstream gradient divided by the window size.
template <typename T>
void avgpool_backward(const Tensor4<T>& gy, int window_h, int window_w, int in_h,
                      int in_w, Tensor4<T>& dx) {
  if (gy.h * window_h != in_h || gy.w * window_w != in_w)
    throw ShapeError("avgpool backward: shape mismatch");
  dx.reshape(gy.n, gy.c, in_h, in_w);
  const T inv = T(1) / static_cast<T>(window_h * window_w);
  for (int in = 0; in < gy.n; ++in)
    for (int c = 0; c < gy.c; ++c)
      for (int p = 0; p < gy.h; ++p)
        for (int q = 0; q < gy.w; ++q) {
          const T g = gy.at(in, c, p, q) * inv;
          for (int dh = 0; dh < window_h; ++dh)
            for (int dw = 0; dw < window_w; ++dw)
              dx.at(in, c, p * window_h + dh, q * window_w + dw) = g;
        }
}

/// Pools the whole feature map to 1x1 (window = HxW of whatever arrives).
template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  const Tensor4<T>& forward(const Tensor4<T>& x, bool /*train*/) override {
    avgpool_forward(x, x.h, x.w, out_);
    return out_;
  }
  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    if (!need_dx) return dx_;
    avgpool_backward(gy, x.h, x.w, x.h, x.w, dx_);
    return dx_;
  }
  std::string describe() const override { return "avgpool(global)"; }

 private:
  Tensor4<T> out_, dx_;
};

// ---------------------------------------------------------------------------
// Fully connected

/// Affine map on flattened samples: y = x W^T + b with W (out x in).
template <typename T>
class FullyConnected : public Layer<T> {
 public:
  FullyConnected(int in_features, int out_features)
      : in_(in_features), out_features_(out_features) {
    if (in_features < 1 || out_features < 1)
      throw ShapeError("fc: feature counts must be positive");
    w_.assign(static_cast<std::size_t>(out_features) * in_features, T(0));
    b_.assign(out_features, T(0));
    gw_.assign(w_.size(), T(0));
    gb_.assign(b_.size(), T(0));
  }

  const Tensor4<T>& forward(const Tensor4<T>& x, bool /*train*/) override {
    check_in(x);
    out_.reshape(x.n, out_features_, 1, 1);
    gemm(false, true, x.n, out_features_, in_, T(1), x.data.data(), in_, w_.data(), in_,
         T(0), out_.data.data(), out_features_);
    for (int in = 0; in < x.n; ++in) {
      T* row = out_.data.data() + static_cast<std::size_t>(in) * out_features_;
      for (int f = 0; f < out_features_; ++f) row[f] += b_[f];
    }
    return out_;
  }

  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    check_in(x);
    if (gy.n != x.n || static_cast<int>(gy.sample_size()) != out_features_)
      throw ShapeError("fc backward: gradient shape " + gy.shape_str());
    gemm(true, false, out_features_, in_, x.n, T(1), gy.data.data(), out_features_,
         x.data.data(), in_, T(0), gw_.data(), in_);
    std::fill(gb_.begin(), gb_.end(), T(0));
    for (int in = 0; in < x.n; ++in) {
      const T* row = gy.data.data() + static_cast<std::size_t>(in) * out_features_;
      for (int f = 0; f < out_features_; ++f) gb_[f] += row[f];
    }
    if (need_dx) {
      dx_.reshape(x.n, x.c, x.h, x.w);
      gemm(false, false, x.n, in_, out_features_, T(1), gy.data.data(), out_features_,
           w_.data(), in_, T(0), dx_.data.data(), in_);
    }
    return dx_;
  }

  void collect_params(std::vector<ParamView<T>>& out) override {
    out.push_back({describe() + ".weight", &w_, &gw_, true});
    out.push_back({describe() + ".bias", &b_, &gb_, false});
  }
  void init_params(Rng& rng, const InitConfig& /*cfg*/) override {
    he_fill(w_, in_, rng);
    std::fill(b_.begin(), b_.end(), T(0));
  }
  std::int64_t param_count() const override {
    return static_cast<std::int64_t>(w_.size() + b_.size());
  }
  std::string describe() const override {
    return "fc(" + std::to_string(in_) + "->" + std::to_string(out_features_) + ")";
  }

  std::vector<T>& weight() { return w_; }
  std::vector<T>& bias() { return b_; }
  int in_features() const { return in_; }
  int out_features() const { return out_features_; }

 private:
  void check_in(const Tensor4<T>& x) const {
    if (static_cast<int>(x.sample_size()) != in_)
      throw ShapeError("fc: expected " + std::to_string(in_) +
                       " features per sample, got " + std::to_string(x.sample_size()));
  }

  int in_, out_features_;
  std::vector<T> w_, b_, gw_, gb_;
  Tensor4<T> out_, dx_;
};

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout: at train time each element survives with probability
/// 1-rate and is scaled by 1/(1-rate), so expectations match eval mode,
/// which is the identity. rate = 0 is a pure pass-through that consumes no
/// randomness.
template <typename T>
class Dropout : public Layer<T> {
 public:
  Dropout(T rate, Rng rng) : rate_(rate), rng_(rng) {
    if (!(rate >= T(0) && rate < T(1)))
      throw ShapeError("dropout: rate must be in [0, 1)");
  }
  Dropout(T rate, std::uint64_t seed) : Dropout(rate, Rng(seed)) {}

  const Tensor4<T>& forward(const Tensor4<T>& x, bool train) override {
    if (!train || rate_ == T(0)) {
      active_ = false;
      return x;
    }
    active_ = true;
    out_.reshape(x.n, x.c, x.h, x.w);
    mask_.resize(x.size());
    const T keep = T(1) - rate_;
    const T scale = T(1) / keep;
    const T* xp = x.data.data();
    T* yp = out_.data.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng_.bernoulli(static_cast<double>(keep)) ? scale : T(0);
      yp[i] = xp[i] * mask_[i];
    }
    return out_;
  }

  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    if (!active_) return gy;
    if (!need_dx) return dx_;
    dx_.reshape(x.n, x.c, x.h, x.w);
    const T* gp = gy.data.data();
    T* dp = dx_.data.data();
    for (std::size_t i = 0; i < gy.size(); ++i) dp[i] = gp[i] * mask_[i];
    return dx_;
  }

  std::string describe() const override {
    return "dropout(" + std::to_string(static_cast<double>(rate_)) + ")";
  }
  void collect_rngs(std::vector<Rng*>& out) override {
    if (rate_ > T(0)) out.push_back(&rng_);
  }
  Rng& rng() { return rng_; }

 private:
  T rate_;
  Rng rng_;
  bool active_ = false;
  std::vector<T> mask_;
  Tensor4<T> out_, dx_;
};

// ---------------------------------------------------------------------------
// Softmax cross-entropy loss head

template <typename T>
struct LossResult {
  T loss = 0;
  Tensor4<T> dlogits;
};

/// Mean cross-entropy over the batch with log-sum-exp stabilization.
/// dlogits = (softmax - onehot) / batch.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor4<T>& logits, const std::vector<int>& labels) {
  const int batch = logits.n;
  const int k = static_cast<int>(logits.sample_size());
  if (static_cast<int>(labels.size()) != batch)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(batch));
  LossResult<T> res;
  res.dlogits.reshape(logits.n, logits.c, logits.h, logits.w);
  double total = 0;
  const T invb = T(1) / static_cast<T>(batch);
  for (int in = 0; in < batch; ++in) {
    const int y = labels[in];
    if (y < 0 || y >= k)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) +
                       " out of range [0," + std::to_string(k) + ")");
    const T* z = logits.data.data() + static_cast<std::size_t>(in) * k;
    T* d = res.dlogits.data.data() + static_cast<std::size_t>(in) * k;
    T zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0;
    for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j] - zmax));
    const double lse = static_cast<double>(zmax) + std::log(sum);
    total += lse - static_cast<double>(z[y]);
    for (int j = 0; j < k; ++j) {
      const T p = static_cast<T>(std::exp(static_cast<double>(z[j]) - lse));
      d[j] = (p - (j == y ? T(1) : T(0))) * invb;
    }
  }
  res.loss = static_cast<T>(total / batch);
  return res;
}

}  // namespace volt
