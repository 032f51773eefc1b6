#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "volt/conv.hpp"
#include "volt/layers.hpp"

namespace volt {

enum class FirstLayerKind { linear, volterra };

// ---------------------------------------------------------------------------
// Convolution layers

template <typename T>
class LinearConv : public Layer<T> {
 public:
  explicit LinearConv(const ConvGeometry& g) : bank_(g) {
    grads_.w1.assign(bank_.w1.size(), T(0));
    grads_.bias.assign(bank_.bias.size(), T(0));
  }

  const Tensor4<T>& forward(const Tensor4<T>& x, bool /*train*/) override {
    linear_forward_into(x, bank_, out_);
    return out_;
  }
  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    linear_backward_into(x, gy, bank_, grads_, need_dx ? &dx_ : nullptr);
    return dx_;
  }
  void collect_params(std::vector<ParamView<T>>& out) override {
    out.push_back({describe() + ".w1", &bank_.w1, &grads_.w1, true});
    out.push_back({describe() + ".bias", &bank_.bias, &grads_.bias, false});
  }
  void init_params(Rng& rng, const InitConfig& /*cfg*/) override {
    he_fill(bank_.w1, bank_.geom.patch_len(), rng);
    std::fill(bank_.bias.begin(), bank_.bias.end(), T(0));
  }
  std::int64_t param_count() const override {
    return static_cast<std::int64_t>(bank_.w1.size() + bank_.bias.size());
  }
  std::string describe() const override {
    const ConvGeometry& g = bank_.geom;
    return "linear_conv(" + std::to_string(g.in_channels) + "->" +
           std::to_string(g.out_channels) + ",k" + std::to_string(g.kernel_h) + "x" +
           std::to_string(g.kernel_w) + ",s" + std::to_string(g.stride) + ")";
  }

  LinearFilterBank<T>& bank() { return bank_; }
  const LinearFilterBank<T>& bank() const { return bank_; }

 private:
  LinearFilterBank<T> bank_;
  ConvGrads<T> grads_;
  Tensor4<T> out_, dx_;
};

template <typename T>
class VolterraConv : public Layer<T> {
 public:
  explicit VolterraConv(const ConvGeometry& g, QuadMode mode = QuadMode::full)
      : bank_(g, mode) {
    grads_.w1.assign(bank_.w1.size(), T(0));
    grads_.w2.assign(bank_.w2.size(), T(0));
    grads_.bias.assign(bank_.bias.size(), T(0));
  }

  const Tensor4<T>& forward(const Tensor4<T>& x, bool /*train*/) override {
    volterra_forward_into(x, bank_, out_);
    return out_;
  }
  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    volterra_backward_into(x, gy, bank_, grads_, need_dx ? &dx_ : nullptr);
    return dx_;
  }
  void collect_params(std::vector<ParamView<T>>& out) override {
    out.push_back({describe() + ".w1", &bank_.w1, &grads_.w1, true});
    out.push_back({describe() + ".w2", &bank_.w2, &grads_.w2, true});
    out.push_back({describe() + ".bias", &bank_.bias, &grads_.bias, false});
  }
  void init_params(Rng& rng, const InitConfig& cfg) override {
    const ConvGeometry& g = bank_.geom;
    const int n = g.patch_len();
    he_fill(bank_.w1, n, rng);
    std::fill(bank_.bias.begin(), bank_.bias.end(), T(0));
    if (cfg.w2_init == W2Init::zero) {
      std::fill(bank_.w2.begin(), bank_.w2.end(), T(0));
    } else {
      const double stddev = std::sqrt(2.0 / (n * cfg.w2_ex2));
      for (int f = 0; f < g.out_channels; ++f) {
        T* w2 = bank_.filter_w2(f);
        for (int i = 0; i < n; ++i)
          for (int j = i; j < n; ++j)
            w2[packed_index(i, j, n)] =
                quad_pair_active(g, bank_.quad_mode, i, j)
                    ? static_cast<T>(rng.normal() * stddev)
                    : T(0);
      }
    }
  }
  /// Counts trainable parameters, so per-channel mode counts only the
  /// active packed entries even though storage is dense.
  std::int64_t param_count() const override {
    const std::int64_t per_filter =
        bank_.geom.patch_len() + active_quad_count(bank_.geom, bank_.quad_mode) + 1;
    return per_filter * bank_.geom.out_channels;
  }
  std::string describe() const override {
    const ConvGeometry& g = bank_.geom;
    std::string s = "volterra_conv(" + std::to_string(g.in_channels) + "->" +
                    std::to_string(g.out_channels) + ",k" + std::to_string(g.kernel_h) +
                    "x" + std::to_string(g.kernel_w) + ",s" + std::to_string(g.stride) +
                    ")";
    if (bank_.quad_mode == QuadMode::per_channel) s += "[per_channel]";
    return s;
  }

  VolterraFilterBank<T>& bank() { return bank_; }
  const VolterraFilterBank<T>& bank() const { return bank_; }

 private:
  VolterraFilterBank<T> bank_;
  ConvGrads<T> grads_;
  Tensor4<T> out_, dx_;
};

// ---------------------------------------------------------------------------
// Residual block

/// Pre-activation residual block: BN -> ReLU -> conv3x3(stride) -> BN ->
/// ReLU -> [dropout] -> conv3x3 -> (+ shortcut). The shortcut is the
/// identity exactly when channels are unchanged and stride is 1; otherwise a
/// 1x1 projection convolution with the block's stride, applied to the
/// pre-activated input (the BN+ReLU output), as in Wide ResNet practice.
template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(int in_channels, int out_channels, int stride, T dropout_rate,
                Rng dropout_rng)
      : bn1_(in_channels),
        conv1_(ConvGeometry{in_channels, 3, 3, stride, 1, out_channels}),
        bn2_(out_channels),
        conv2_(ConvGeometry{out_channels, 3, 3, 1, 1, out_channels}),
        drop_(dropout_rate, dropout_rng),
        identity_(in_channels == out_channels && stride == 1) {
    if (!identity_)
      proj_ = std::make_unique<LinearConv<T>>(
          ConvGeometry{in_channels, 1, 1, stride, 0, out_channels});
  }

  bool has_identity_shortcut() const { return identity_; }

  const Tensor4<T>& forward(const Tensor4<T>& x, bool train) override {
    h1_ = &bn1_.forward(x, train);
    a1_ = &relu1_.forward(*h1_, train);
    y1_ = &conv1_.forward(*a1_, train);
    h2_ = &bn2_.forward(*y1_, train);
    a2_ = &relu2_.forward(*h2_, train);
    a2d_ = &drop_.forward(*a2_, train);
    const Tensor4<T>& y2 = conv2_.forward(*a2d_, train);
    const Tensor4<T>& sc = identity_ ? x : proj_->forward(*a1_, train);
    out_.reshape(y2.n, y2.c, y2.h, y2.w);
    const T* yp = y2.data.data();
    const T* sp = sc.data.data();
    T* op = out_.data.data();
    const std::size_t sz = y2.size();
    for (std::size_t i = 0; i < sz; ++i) op[i] = yp[i] + sp[i];
    return out_;
  }

  const Tensor4<T>& backward(const Tensor4<T>& x, const Tensor4<T>& gy,
                             bool need_dx) override {
    const Tensor4<T>& ga2d = conv2_.backward(*a2d_, gy, true);
    const Tensor4<T>& ga2 = drop_.backward(*a2_, ga2d, true);
    const Tensor4<T>& gh2 = relu2_.backward(*h2_, ga2, true);
    const Tensor4<T>& gy1 = bn2_.backward(*y1_, gh2, true);
    const Tensor4<T>& ga1_main = conv1_.backward(*a1_, gy1, true);
    const Tensor4<T>* ga1 = &ga1_main;
    if (!identity_) {
      const Tensor4<T>& ga1_proj = proj_->backward(*a1_, gy, true);
      ga1_sum_.reshape(ga1_main.n, ga1_main.c, ga1_main.h, ga1_main.w);
      ga1_sum_.data = ga1_main.data;
      axpy(T(1), ga1_proj, ga1_sum_);
      ga1 = &ga1_sum_;
    }
    const Tensor4<T>& gh1 = relu1_.backward(*h1_, *ga1, true);
    const Tensor4<T>& dx_main = bn1_.backward(x, gh1, need_dx);
    if (!need_dx) return dx_;
    if (!identity_) return dx_main;  // gy reached x only through the projection
    dx_.reshape(x.n, x.c, x.h, x.w);
    dx_.data = dx_main.data;
    axpy(T(1), gy, dx_);
    return dx_;
  }

  void collect_params(std::vector<ParamView<T>>& out) override {
    bn1_.collect_params(out);
    conv1_.collect_params(out);
    bn2_.collect_params(out);
    conv2_.collect_params(out);
    if (proj_) proj_->collect_params(out);
  }
  void collect_buffers(std::vector<BufferView<T>>& out) override {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
  }
  void collect_rngs(std::vector<Rng*>& out) override { drop_.collect_rngs(out); }
  void init_params(Rng& rng, const InitConfig& cfg) override {
    bn1_.init_params(rng, cfg);
    conv1_.init_params(rng, cfg);
    bn2_.init_params(rng, cfg);
    conv2_.init_params(rng, cfg);
    if (proj_) proj_->init_params(rng, cfg);
  }
  std::int64_t param_count() const override {
    std::int64_t total = bn1_.param_count() + conv1_.param_count() +
                         bn2_.param_count() + conv2_.param_count();
    if (proj_) total += proj_->param_count();
    return total;
  }
  std::string describe() const override {
    const ConvGeometry& g1 = conv1_.bank().geom;
    return "block(" + std::to_string(g1.in_channels) + "->" +
           std::to_string(g1.out_channels) + ",s" + std::to_string(g1.stride) +
           (identity_ ? ",identity" : ",proj") + ")";
  }

 private:
  BatchNorm<T> bn1_;
  ReLU<T> relu1_;
  LinearConv<T> conv1_;
  BatchNorm<T> bn2_;
  ReLU<T> relu2_;
  LinearConv<T> conv2_;
  Dropout<T> drop_;
  std::unique_ptr<LinearConv<T>> proj_;
  bool identity_;

  const Tensor4<T>*h1_ = nullptr, *a1_ = nullptr, *y1_ = nullptr, *h2_ = nullptr,
                   *a2_ = nullptr, *a2d_ = nullptr;
  Tensor4<T> out_, ga1_sum_, dx_;
};

// ---------------------------------------------------------------------------
// Network

/// Shape of the residual stack. Depth d must satisfy N = (d-4)/6 with N a
/// positive integer: an initial convolution, three groups of N two-conv
/// blocks, and the classifier head account for d weighted layers.
struct NetworkSpec {
  int depth = 10;
  int widen = 1;
  int classes = 10;
  int in_channels = 3;
  FirstLayerKind first_layer = FirstLayerKind::linear;
  QuadMode quad_mode = QuadMode::full;
  double dropout = 0.0;

  int blocks_per_group() const {
    if (depth < 10 || (depth - 4) % 6 != 0)
      throw ShapeError("network depth " + std::to_string(depth) +
                       " invalid: (depth-4)/6 must be a positive integer");
    return (depth - 4) / 6;
  }
};

template <typename T>
class Network {
 public:
  Layer<T>& add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
  }

  const Tensor4<T>& forward(const Tensor4<T>& x, bool train) {
    acts_.assign(layers_.size() + 1, nullptr);
    acts_[0] = &x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      acts_[i + 1] = &layers_[i]->forward(*acts_[i], train);
    return *acts_.back();
  }

  /// Backpropagates through the most recent forward; the input tensor passed
  /// there must still be alive. Fills every layer's parameter gradients. The
  /// first layer's input gradient is not needed and is skipped.
  void backward(const Tensor4<T>& dlogits) {
    if (acts_.empty()) throw ShapeError("network backward before forward");
    const Tensor4<T>* g = &dlogits;
    for (std::size_t i = layers_.size(); i-- > 0;)
      g = &layers_[i]->backward(*acts_[i], *g, i > 0);
  }

  std::vector<ParamView<T>> params() {
    std::vector<ParamView<T>> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }
  std::vector<BufferView<T>> buffers() {
    std::vector<BufferView<T>> out;
    for (auto& l : layers_) l->collect_buffers(out);
    return out;
  }
  std::vector<Rng*> rngs() {
    std::vector<Rng*> out;
    for (auto& l : layers_) l->collect_rngs(out);
    return out;
  }
  void init_params(Rng& rng, const InitConfig& cfg = {}) {
    for (auto& l : layers_) l->init_params(rng, cfg);
  }

  std::int64_t param_count() const {
    std::int64_t total = 0;
    for (const auto& l : layers_) total += l->param_count();
    return total;
  }
  /// One (description, trainable parameter count) row per top-level layer.
  std::vector<std::pair<std::string, std::int64_t>> param_table() const {
    std::vector<std::pair<std::string, std::int64_t>> rows;
    for (const auto& l : layers_) rows.emplace_back(l->describe(), l->param_count());
    return rows;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<const Tensor4<T>*> acts_;
};

/// Assembles the stack: BN over the input, the first 3x3 convolution (linear
/// or Volterra, output width 16k), three groups of N pre-activation residual
/// blocks at widths 16k/32k/64k (groups 2 and 3 downsample by stride 2 in
/// their first block), then BN, ReLU, global average pooling, and the
/// fully-connected classifier. Dropout streams are forked deterministically
/// from `seed` per block. Parameters are zero until init_params runs.
template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed = 0) {
  const int n_blocks = spec.blocks_per_group();
  if (spec.widen < 1) throw ShapeError("widen factor must be >= 1");
  if (spec.classes < 2) throw ShapeError("need at least 2 classes");
  const int widths[3] = {16 * spec.widen, 32 * spec.widen, 64 * spec.widen};

  Network<T> net;
  net.add(std::make_unique<BatchNorm<T>>(spec.in_channels));
  const ConvGeometry g0{spec.in_channels, 3, 3, 1, 1, widths[0]};
  if (spec.first_layer == FirstLayerKind::volterra)
    net.add(std::make_unique<VolterraConv<T>>(g0, spec.quad_mode));
  else
    net.add(std::make_unique<LinearConv<T>>(g0));

  Rng dropout_base(seed);
  std::uint64_t stream = 0;
  int cin = widths[0];
  for (int gi = 0; gi < 3; ++gi)
    for (int b = 0; b < n_blocks; ++b) {
      const int stride = (gi > 0 && b == 0) ? 2 : 1;
      net.add(std::make_unique<ResidualBlock<T>>(cin, widths[gi], stride,
                                                 static_cast<T>(spec.dropout),
                                                 dropout_base.fork(stream++)));
      cin = widths[gi];
    }

  net.add(std::make_unique<BatchNorm<T>>(widths[2]));
  net.add(std::make_unique<ReLU<T>>());
  net.add(std::make_unique<GlobalAvgPool<T>>());
  net.add(std::make_unique<FullyConnected<T>>(widths[2], spec.classes));
  return net;
}

}  // namespace volt
