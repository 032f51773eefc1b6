#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "volt/common.hpp"

namespace volt {

/// Dense rank-4 array (batch, channel, height, width), row-major with W
/// fastest. Element (n,c,h,w) lives at flat index ((n*C + c)*H + h)*W + w.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw ShapeError("Tensor4: dimensions must be positive");
  }

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }

  /// Re-dimension in place, reusing the allocation when it already fits.
  /// Element values are unspecified afterwards; callers overwrite.
  void reshape(int n_, int c_, int h_, int w_) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw ShapeError("Tensor4: dimensions must be positive");
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.resize(static_cast<std::size_t>(n_) * c_ * h_ * w_);
  }

  T& at(int in, int ic, int ih, int iw) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  const T& at(int in, int ic, int ih, int iw) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }

  T* sample(int in) { return data.data() + sample_size() * in; }
  const T* sample(int in) const { return data.data() + sample_size() * in; }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  template <typename F>
  void map(F&& f) {
    for (auto& x : data) x = f(x);
  }
};

/// y += a * x, elementwise over whole tensors.
template <typename T>
void axpy(T a, const Tensor4<T>& x, Tensor4<T>& y) {
  if (!x.same_shape(y))
    throw ShapeError("axpy: shape mismatch " + x.shape_str() + " vs " +
                     y.shape_str());
  const T* xp = x.data.data();
  T* yp = y.data.data();
  const std::size_t sz = x.size();
  for (std::size_t i = 0; i < sz; ++i) yp[i] += a * xp[i];
}

template <typename T>
void scale(Tensor4<T>& x, T a) {
  for (auto& v : x.data) v *= a;
}

/// Per-channel mean and population variance over the (N,H,W) axes.
template <typename T>
void channel_mean_var(const Tensor4<T>& x, std::vector<T>& mean,
                      std::vector<T>& var) {
  mean.assign(x.c, T(0));
  var.assign(x.c, T(0));
  const std::size_t m = static_cast<std::size_t>(x.n) * x.h * x.w;
  if (m == 0) throw ShapeError("channel_mean_var: empty tensor");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int ic = 0; ic < x.c; ++ic) {
    double s = 0.0;
    for (int in = 0; in < x.n; ++in) {
      const T* p = x.sample(in) + plane * ic;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    const double mu = s / static_cast<double>(m);
    double sq = 0.0;
    for (int in = 0; in < x.n; ++in) {
      const T* p = x.sample(in) + plane * ic;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mu;
        sq += d * d;
      }
    }
    mean[ic] = static_cast<T>(mu);
    var[ic] = static_cast<T>(sq / static_cast<double>(m));
  }
}

/// Convolution geometry. Patch length n = in_channels * kernel_h * kernel_w;
/// output dims H_o = floor((H + 2*pad - kernel_h)/stride) + 1, same for W.
struct ConvGeometry {
  int in_channels = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride = 1;
  int pad = 0;
  int out_channels = 1;

  int patch_len() const { return in_channels * kernel_h * kernel_w; }

  void validate() const {
    if (in_channels < 1 || kernel_h < 1 || kernel_w < 1 || out_channels < 1)
      throw ShapeError("ConvGeometry: counts must be positive");
    if (stride < 1) throw ShapeError("ConvGeometry: stride must be >= 1");
    if (pad < 0) throw ShapeError("ConvGeometry: pad must be >= 0");
  }

  int out_h(int h) const {
    const int v = (h + 2 * pad - kernel_h) / stride + 1;
    if (h + 2 * pad < kernel_h || v < 1)
      throw ShapeError("ConvGeometry: output height < 1");
    return v;
  }
  int out_w(int w) const {
    const int v = (w + 2 * pad - kernel_w) / stride + 1;
    if (w + 2 * pad < kernel_w || v < 1)
      throw ShapeError("ConvGeometry: output width < 1");
    return v;
  }
};

/// Unfolded receptive-field patches: logically (rows=n) x (cols=H_o*W_o),
/// column q = the vectorized patch at output location q. Stored row-major
/// (data[i*cols + q]): one row holds a single patch element (c,kh,kw) across
/// every output position. For stride 1 that makes unfolding, refolding and
/// the elementwise kernels run over contiguous spans the length of an output
/// row, which is what keeps them off the profile.
/// Within a patch the element order is channel-major, then kernel row, then
/// column, matching Tensor4 layout. Padded positions are exactly zero.
template <typename T>
struct PatchMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  PatchMatrix() = default;
  PatchMatrix(int rows_, int cols_)
      : rows(rows_), cols(cols_),
        data(static_cast<std::size_t>(rows_) * cols_, T(0)) {}

  void resize(int rows_, int cols_) {
    rows = rows_;
    cols = cols_;
    data.resize(static_cast<std::size_t>(rows_) * cols_);
  }

  T& at(int i, int q) { return data[static_cast<std::size_t>(i) * cols + q]; }
  const T& at(int i, int q) const {
    return data[static_cast<std::size_t>(i) * cols + q];
  }
  T* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const T* row(int i) const {
    return data.data() + static_cast<std::size_t>(i) * cols;
  }
};

/// Unfolds one image (C,H,W planes at `img`) into patch columns.
/// `out` is resized; a reused instance keeps its allocation.
template <typename T>
void im2col_into(const T* img, int channels, int h, int w,
                 const ConvGeometry& g, PatchMatrix<T>& out) {
  g.validate();
  if (channels != g.in_channels)
    throw ShapeError("im2col: input has " + std::to_string(channels) +
                     " channels, geometry expects " +
                     std::to_string(g.in_channels));
  const int ho = g.out_h(h), wo = g.out_w(w);
  out.resize(g.patch_len(), ho * wo);

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  int t = 0;
  for (int c = 0; c < channels; ++c)
    for (int kh = 0; kh < g.kernel_h; ++kh)
      for (int kw = 0; kw < g.kernel_w; ++kw, ++t) {
        const T* src = img + plane * c;
        T* trow = out.row(t);
        const int base = kw - g.pad;  // iw = base + q*stride
        // q range whose source column stays inside the image
        const int q_lo = std::min(
            wo, base >= 0 ? 0 : (-base + g.stride - 1) / g.stride);
        const int q_hi =
            base >= w ? 0 : std::min(wo, (w - 1 - base) / g.stride + 1);
        for (int p = 0; p < ho; ++p) {
          const int ih = p * g.stride - g.pad + kh;
          T* dst = trow + static_cast<std::size_t>(p) * wo;
          if (ih < 0 || ih >= h || q_lo >= q_hi) {
            std::memset(dst, 0, sizeof(T) * wo);
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(ih) * w + base;
          for (int q = 0; q < q_lo; ++q) dst[q] = T(0);
          if (g.stride == 1) {
            std::memcpy(dst + q_lo, srow + q_lo, sizeof(T) * (q_hi - q_lo));
          } else {
            for (int q = q_lo; q < q_hi; ++q) dst[q] = srow[static_cast<std::size_t>(q) * g.stride];
          }
          for (int q = q_hi; q < wo; ++q) dst[q] = T(0);
        }
      }
}

template <typename T>
PatchMatrix<T> im2col(const Tensor4<T>& t, int sample, const ConvGeometry& g) {
  PatchMatrix<T> out;
  im2col_into(t.sample(sample), t.c, t.h, t.w, g, out);
  return out;
}

/// Adjoint of im2col: every input pixel receives the sum of all patch entries
/// that sampled it; padded positions are discarded. Writes (overwrites) the
/// C,H,W image at `img`.
template <typename T>
void col2im_into(const PatchMatrix<T>& cols, const ConvGeometry& g, int h,
                 int w, T* img) {
  g.validate();
  const int ho = g.out_h(h), wo = g.out_w(w);
  if (cols.rows != g.patch_len() || cols.cols != ho * wo)
    throw ShapeError("col2im: patch matrix is " + std::to_string(cols.rows) +
                     "x" + std::to_string(cols.cols) + ", expected " +
                     std::to_string(g.patch_len()) + "x" +
                     std::to_string(ho * wo));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::memset(img, 0, sizeof(T) * plane * g.in_channels);
  int t = 0;
  for (int c = 0; c < g.in_channels; ++c)
    for (int kh = 0; kh < g.kernel_h; ++kh)
      for (int kw = 0; kw < g.kernel_w; ++kw, ++t) {
        T* dstp = img + plane * c;
        const T* trow = cols.row(t);
        const int base = kw - g.pad;
        const int q_lo = std::min(
            wo, base >= 0 ? 0 : (-base + g.stride - 1) / g.stride);
        const int q_hi =
            base >= w ? 0 : std::min(wo, (w - 1 - base) / g.stride + 1);
        if (q_lo >= q_hi) continue;
        for (int p = 0; p < ho; ++p) {
          const int ih = p * g.stride - g.pad + kh;
          if (ih < 0 || ih >= h) continue;
          const T* srow = trow + static_cast<std::size_t>(p) * wo;
          T* drow = dstp + static_cast<std::size_t>(ih) * w + base;
          if (g.stride == 1) {
            for (int q = q_lo; q < q_hi; ++q) drow[q] += srow[q];
          } else {
            for (int q = q_lo; q < q_hi; ++q) drow[static_cast<std::size_t>(q) * g.stride] += srow[q];
          }
        }
      }
}

template <typename T>
Tensor4<T> col2im(const PatchMatrix<T>& cols, const ConvGeometry& g, int h,
                  int w) {
  Tensor4<T> out(1, g.in_channels, h, w);
  col2im_into(cols, g, h, w, out.sample(0));
  return out;
}

}  // namespace volt
