#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "volt/common.hpp"
#include "volt/gemm.hpp"
#include "volt/tensor.hpp"

namespace volt {

/// Packed upper-triangular index, 0-based, i <= j < n:
///   P(i,j) = i*n - i(i-1)/2 + (j - i)
/// A bijection onto [0, n(n+1)/2). For fixed i the indices are contiguous in
/// j, so writing products in (i, j>=i) order fills the packed vector linearly.
inline int packed_index(int i, int j, int n) { return i * n - i * (i - 1) / 2 + (j - i); }

inline int quad_len(int n) { return n * (n + 1) / 2; }

/// Total parameter count of an order-r filter on an n-element patch,
/// including the bias: C(n+r, r). Multiplicative evaluation, never via
/// factorials; overflow raises NumericError.
inline std::uint64_t volterra_param_count(int n, int r) {
  if (n < 1 || r < 0) throw ShapeError("volterra_param_count: need n >= 1, r >= 0");
  unsigned __int128 acc = 1;
  for (int i = 1; i <= r; ++i) {
    acc = acc * static_cast<unsigned>(n + i);
    acc /= static_cast<unsigned>(i);  // exact: C(n+i, i) is integral
    if (acc > std::numeric_limits<std::uint64_t>::max())
      throw NumericError("volterra_param_count: overflow");
  }
  return static_cast<std::uint64_t>(acc);
}

/// Which pairs (i,j) of the packed quadratic weights are trainable.
/// full: every pair, cross-channel interactions included (the default).
/// per_channel: only pairs whose patch elements come from the same input
/// channel; the remaining packed entries are structurally zero.
enum class QuadMode { full, per_channel };

inline bool quad_pair_active(const ConvGeometry& g, QuadMode mode, int i, int j) {
  if (mode == QuadMode::full) return true;
  const int k2 = g.kernel_h * g.kernel_w;
  return i / k2 == j / k2;
}

inline int active_quad_count(const ConvGeometry& g, QuadMode mode) {
  const int n = g.patch_len();
  if (mode == QuadMode::full) return quad_len(n);
  const int k2 = g.kernel_h * g.kernel_w;
  return g.in_channels * quad_len(k2);
}

/// Linear convolution filters: per output channel, weights over the patch and
/// a bias. w1 is (out_channels x n) row-major.
template <typename T>
struct LinearFilterBank {
  ConvGeometry geom;
  std::vector<T> w1;
  std::vector<T> bias;

  LinearFilterBank() = default;
  explicit LinearFilterBank(const ConvGeometry& g)
      : geom(g), w1(static_cast<std::size_t>(g.out_channels) * g.patch_len(), T(0)),
        bias(g.out_channels, T(0)) {
    g.validate();
  }

  const T* filter_w1(int f) const { return w1.data() + static_cast<std::size_t>(f) * geom.patch_len(); }
  T* filter_w1(int f) { return w1.data() + static_cast<std::size_t>(f) * geom.patch_len(); }
};

/// Second-order filters: linear weights w1, packed upper-triangular quadratic
/// weights w2 in P(i,j) order (out_channels x n(n+1)/2, row-major), bias.
/// Per-filter trainable parameters: n + n(n+1)/2 + 1 in full mode.
template <typename T>
struct VolterraFilterBank {
  ConvGeometry geom;
  QuadMode quad_mode = QuadMode::full;
  std::vector<T> w1;
  std::vector<T> w2;
  std::vector<T> bias;

  VolterraFilterBank() = default;
  explicit VolterraFilterBank(const ConvGeometry& g, QuadMode mode = QuadMode::full)
      : geom(g), quad_mode(mode),
        w1(static_cast<std::size_t>(g.out_channels) * g.patch_len(), T(0)),
        w2(static_cast<std::size_t>(g.out_channels) * quad_len(g.patch_len()), T(0)),
        bias(g.out_channels, T(0)) {
    g.validate();
  }

  const T* filter_w1(int f) const { return w1.data() + static_cast<std::size_t>(f) * geom.patch_len(); }
  T* filter_w1(int f) { return w1.data() + static_cast<std::size_t>(f) * geom.patch_len(); }
  const T* filter_w2(int f) const { return w2.data() + static_cast<std::size_t>(f) * quad_len(geom.patch_len()); }
  T* filter_w2(int f) { return w2.data() + static_cast<std::size_t>(f) * quad_len(geom.patch_len()); }
};

/// Same storage as PatchMatrix with rows = n(n+1)/2; column q holds the
/// monomial vector [x_i * x_j, i <= j] of patch q in P(i,j) order.
template <typename T>
using QuadPatchMatrix = PatchMatrix<T>;

template <typename T>
void quad2col_into(const PatchMatrix<T>& patches, QuadPatchMatrix<T>& out) {
  const int n = patches.rows;
  const int cols = patches.cols;
  out.resize(quad_len(n), cols);
  T* dst = out.data.data();
  for (int i = 0; i < n; ++i) {
    const T* xi = patches.row(i);
    for (int j = i; j < n; ++j) {
      const T* xj = patches.row(j);
      for (int q = 0; q < cols; ++q) dst[q] = xi[q] * xj[q];
      dst += cols;
    }
  }
}

template <typename T>
QuadPatchMatrix<T> quad2col(const PatchMatrix<T>& patches) {
  QuadPatchMatrix<T> out;
  quad2col_into(patches, out);
  return out;
}

/// Dense symmetric matrix S with x'Sx equal to the packed quadratic form
/// sum_{i<=j} w2[P(i,j)] x_i x_j: diagonal S_ii = w2_ii, off-diagonal
/// S_ij = w2_ij / 2. Used by the filter-analysis paths; the convolution
/// kernels never materialize it.
template <typename T>
std::vector<T> sym_unpack(const T* packed, int n) {
  std::vector<T> s(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    s[static_cast<std::size_t>(i) * n + i] = packed[packed_index(i, i, n)];
    for (int j = i + 1; j < n; ++j) {
      const T half = packed[packed_index(i, j, n)] / T(2);
      s[static_cast<std::size_t>(i) * n + j] = half;
      s[static_cast<std::size_t>(j) * n + i] = half;
    }
  }
  return s;
}

template <typename T>
struct ConvGrads {
  std::vector<T> w1;
  std::vector<T> w2;  // empty for the linear bank
  std::vector<T> bias;
};

namespace detail {

template <typename T>
void check_forward_shapes(const Tensor4<T>& input, const ConvGeometry& g) {
  if (input.c != g.in_channels)
    throw ShapeError("conv forward: input has " + std::to_string(input.c) +
                     " channels, filters expect " + std::to_string(g.in_channels));
}

template <typename T>
void check_upstream_shapes(const Tensor4<T>& input, const Tensor4<T>& up, const ConvGeometry& g) {
  check_forward_shapes(input, g);
  const int ho = g.out_h(input.h), wo = g.out_w(input.w);
  if (up.n != input.n || up.c != g.out_channels || up.h != ho || up.w != wo)
    throw ShapeError("conv backward: upstream gradient is " + up.shape_str() +
                     ", expected (" + std::to_string(input.n) + "," +
                     std::to_string(g.out_channels) + "," + std::to_string(ho) +
                     "," + std::to_string(wo) + ")");
}

/// Writes output sample (out_channels x cols) from the GEMM result laid out
/// (cols x out_channels), adding the bias.
template <typename T>
void scatter_output(const T* y, const T* bias, int cols, int out_channels, T* dst) {
  for (int f = 0; f < out_channels; ++f) {
    const T b = bias[f];
    T* drow = dst + static_cast<std::size_t>(f) * cols;
    const T* src = y + f;
    for (int q = 0; q < cols; ++q) drow[q] = src[static_cast<std::size_t>(q) * out_channels] + b;
  }
}

/// d(n x cols) += the packed symmetric form s (one packed vector per column)
/// applied to each patch. Walking the packed triangle once and scattering to
/// both (i,j) rows counts the diagonal twice, which is exactly the derivative
/// of the quadratic term. All three matrices share the element-major layout,
/// so each pass is a contiguous fused multiply-add over the columns.
template <typename T>
void add_sym_apply(const PatchMatrix<T>& patches, const PatchMatrix<T>& s, PatchMatrix<T>& d) {
  const int n = patches.rows;
  const int cols = patches.cols;
  const T* sr = s.data.data();
  for (int i = 0; i < n; ++i) {
    const T* xi = patches.row(i);
    T* di = d.row(i);
    for (int q = 0; q < cols; ++q) di[q] += T(2) * sr[q] * xi[q];
    sr += cols;
    for (int j = i + 1; j < n; ++j) {
      const T* xj = patches.row(j);
      T* dj = d.row(j);
      for (int q = 0; q < cols; ++q) {
        di[q] += sr[q] * xj[q];
        dj[q] += sr[q] * xi[q];
      }
      sr += cols;
    }
  }
}

}  // namespace detail

/// Forward pass writing into a caller-owned output tensor (reshaped to fit).
/// Scratch buffers are thread-local and persist across calls, so steady-state
/// training does no per-call allocation.
template <typename T>
void linear_forward_into(const Tensor4<T>& input, const LinearFilterBank<T>& bank,
                         Tensor4<T>& out) {
  const ConvGeometry& g = bank.geom;
  detail::check_forward_shapes(input, g);
  const int ho = g.out_h(input.h), wo = g.out_w(input.w);
  const int cols = ho * wo, n = g.patch_len(), oc = g.out_channels;
  out.reshape(input.n, oc, ho, wo);
#pragma omp parallel num_threads(num_threads())
  {
    static thread_local PatchMatrix<T> x;
    static thread_local std::vector<T> y;
    y.resize(static_cast<std::size_t>(cols) * oc);
#pragma omp for schedule(static)
    for (int s = 0; s < input.n; ++s) {
      im2col_into(input.sample(s), input.c, input.h, input.w, g, x);
      gemm(true, true, cols, oc, n, T(1), x.data.data(), cols, bank.w1.data(), n, T(0), y.data(), oc);
      detail::scatter_output(y.data(), bank.bias.data(), cols, oc, out.sample(s));
    }
  }
}

template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& input, const LinearFilterBank<T>& bank) {
  Tensor4<T> out;
  linear_forward_into(input, bank, out);
  return out;
}

template <typename T>
void volterra_forward_into(const Tensor4<T>& input, const VolterraFilterBank<T>& bank,
                           Tensor4<T>& out) {
  const ConvGeometry& g = bank.geom;
  detail::check_forward_shapes(input, g);
  const int ho = g.out_h(input.h), wo = g.out_w(input.w);
  const int cols = ho * wo, n = g.patch_len(), qn = quad_len(n), oc = g.out_channels;
  out.reshape(input.n, oc, ho, wo);
#pragma omp parallel num_threads(num_threads())
  {
    static thread_local PatchMatrix<T> x;
    static thread_local QuadPatchMatrix<T> phi;
    static thread_local std::vector<T> y;
    y.resize(static_cast<std::size_t>(cols) * oc);
#pragma omp for schedule(static)
    for (int s = 0; s < input.n; ++s) {
      im2col_into(input.sample(s), input.c, input.h, input.w, g, x);
      quad2col_into(x, phi);
      gemm(true, true, cols, oc, n, T(1), x.data.data(), cols, bank.w1.data(), n, T(0), y.data(), oc);
      gemm(true, true, cols, oc, qn, T(1), phi.data.data(), cols, bank.w2.data(), qn, T(1), y.data(), oc);
      detail::scatter_output(y.data(), bank.bias.data(), cols, oc, out.sample(s));
    }
  }
}

template <typename T>
Tensor4<T> volterra_forward(const Tensor4<T>& input, const VolterraFilterBank<T>& bank) {
  Tensor4<T> out;
  volterra_forward_into(input, bank, out);
  return out;
}

namespace detail {

/// Shared worker for the volterra backward passes. Any of the outputs may be
/// null. Weight gradients are accumulated over the batch in sample order
/// within each thread and thread buffers are merged in thread order, so the
/// result is reproducible for a fixed thread count.
template <typename T>
void volterra_backward_impl(const Tensor4<T>& input, const Tensor4<T>& upstream,
                            const ConvGeometry& g, QuadMode mode, const T* w1,
                            const T* w2, ConvGrads<T>* grads, Tensor4<T>* dinput) {
  check_upstream_shapes(input, upstream, g);
  const int ho = g.out_h(input.h), wo = g.out_w(input.w);
  const int cols = ho * wo, n = g.patch_len(), qn = quad_len(n), oc = g.out_channels;
  const bool want_input = dinput != nullptr;
  if (want_input) dinput->reshape(input.n, input.c, input.h, input.w);

  const int nthreads = std::max(1, std::min(num_threads(), input.n));
  std::vector<std::vector<T>> acc_w1, acc_w2, acc_b;
  if (grads) {
    acc_w1.assign(nthreads, std::vector<T>(static_cast<std::size_t>(oc) * n, T(0)));
    acc_w2.assign(nthreads, std::vector<T>(static_cast<std::size_t>(oc) * qn, T(0)));
    acc_b.assign(nthreads, std::vector<T>(oc, T(0)));
  }

#pragma omp parallel num_threads(nthreads)
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    static thread_local PatchMatrix<T> x, phi, d, s;
#pragma omp for schedule(static)
    for (int smp = 0; smp < input.n; ++smp) {
      im2col_into(input.sample(smp), input.c, input.h, input.w, g, x);
      const T* gup = upstream.sample(smp);  // (oc x cols) row-major
      if (grads) {
        quad2col_into(x, phi);
        gemm(false, true, oc, n, cols, T(1), gup, cols, x.data.data(), cols, T(1), acc_w1[tid].data(), n);
        gemm(false, true, oc, qn, cols, T(1), gup, cols, phi.data.data(), cols, T(1), acc_w2[tid].data(), qn);
        T* b = acc_b[tid].data();
        for (int f = 0; f < oc; ++f) {
          const T* row = gup + static_cast<std::size_t>(f) * cols;
          T sum = 0;
          for (int q = 0; q < cols; ++q) sum += row[q];
          b[f] += sum;
        }
      }
      if (want_input) {
        d.resize(n, cols);
        gemm(true, false, n, cols, oc, T(1), w1, n, gup, cols, T(0), d.data.data(), cols);
        s.resize(qn, cols);
        gemm(true, false, qn, cols, oc, T(1), w2, qn, gup, cols, T(0), s.data.data(), cols);
        add_sym_apply(x, s, d);
        col2im_into(d, g, input.h, input.w, dinput->sample(smp));
      }
    }
  }

  if (grads) {
    grads->w1.assign(static_cast<std::size_t>(oc) * n, T(0));
    grads->w2.assign(static_cast<std::size_t>(oc) * qn, T(0));
    grads->bias.assign(oc, T(0));
    for (int t = 0; t < nthreads; ++t) {
      for (std::size_t i = 0; i < grads->w1.size(); ++i) grads->w1[i] += acc_w1[t][i];
      for (std::size_t i = 0; i < grads->w2.size(); ++i) grads->w2[i] += acc_w2[t][i];
      for (int f = 0; f < oc; ++f) grads->bias[f] += acc_b[t][f];
    }
    if (mode == QuadMode::per_channel) {
      for (int f = 0; f < oc; ++f) {
        T* gw2 = grads->w2.data() + static_cast<std::size_t>(f) * qn;
        for (int i = 0; i < n; ++i)
          for (int j = i; j < n; ++j)
            if (!quad_pair_active(g, mode, i, j)) gw2[packed_index(i, j, n)] = T(0);
      }
    }
  }
}

}  // namespace detail

/// Weight gradients only; depends on the input and the upstream gradient but
/// not on the current weights.
template <typename T>
ConvGrads<T> volterra_backward_weights(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                       const ConvGeometry& geom, QuadMode mode = QuadMode::full) {
  ConvGrads<T> grads;
  detail::volterra_backward_impl<T>(input, upstream, geom, mode, nullptr, nullptr, &grads, nullptr);
  return grads;
}

/// Input gradient only. Unlike the linear case this is input-dependent: each
/// patch contributes w1 + (packed symmetric form applied to its own x),
/// scaled by the upstream gradient and aggregated over overlapping windows.
template <typename T>
Tensor4<T> volterra_backward_input(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                   const VolterraFilterBank<T>& bank) {
  Tensor4<T> dinput;
  detail::volterra_backward_impl<T>(input, upstream, bank.geom, bank.quad_mode,
                                    bank.w1.data(), bank.w2.data(), nullptr, &dinput);
  return dinput;
}

template <typename T>
struct VolterraBackward {
  ConvGrads<T> grads;
  Tensor4<T> dinput;
};

/// Fused pass computing weight and input gradients in one sweep over the
/// batch; the unfolded patch and monomial matrices are built once per sample.
template <typename T>
VolterraBackward<T> volterra_backward(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                      const VolterraFilterBank<T>& bank) {
  VolterraBackward<T> out;
  detail::volterra_backward_impl<T>(input, upstream, bank.geom, bank.quad_mode,
                                    bank.w1.data(), bank.w2.data(), &out.grads, &out.dinput);
  return out;
}

template <typename T>
struct LinearBackward {
  ConvGrads<T> grads;
  Tensor4<T> dinput;
};

/// Backward pass writing into caller-owned buffers. Pass dinput = nullptr to
/// skip the input gradient (a layer whose upstream needs no gradient).
template <typename T>
void linear_backward_into(const Tensor4<T>& input, const Tensor4<T>& upstream,
                          const LinearFilterBank<T>& bank, ConvGrads<T>& grads,
                          Tensor4<T>* dinput) {
  const ConvGeometry& g = bank.geom;
  detail::check_upstream_shapes(input, upstream, g);
  const int ho = g.out_h(input.h), wo = g.out_w(input.w);
  const int cols = ho * wo, n = g.patch_len(), oc = g.out_channels;
  const bool want_input = dinput != nullptr;
  if (want_input) dinput->reshape(input.n, input.c, input.h, input.w);

  const int nthreads = std::max(1, std::min(num_threads(), input.n));
  std::vector<std::vector<T>> acc_w1(nthreads, std::vector<T>(static_cast<std::size_t>(oc) * n, T(0)));
  std::vector<std::vector<T>> acc_b(nthreads, std::vector<T>(oc, T(0)));

#pragma omp parallel num_threads(nthreads)
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    static thread_local PatchMatrix<T> x, d;
#pragma omp for schedule(static)
    for (int smp = 0; smp < input.n; ++smp) {
      im2col_into(input.sample(smp), input.c, input.h, input.w, g, x);
      const T* gup = upstream.sample(smp);
      gemm(false, true, oc, n, cols, T(1), gup, cols, x.data.data(), cols, T(1), acc_w1[tid].data(), n);
      T* b = acc_b[tid].data();
      for (int f = 0; f < oc; ++f) {
        const T* row = gup + static_cast<std::size_t>(f) * cols;
        T sum = 0;
        for (int q = 0; q < cols; ++q) sum += row[q];
        b[f] += sum;
      }
      if (want_input) {
        d.resize(n, cols);
        gemm(true, false, n, cols, oc, T(1), bank.w1.data(), n, gup, cols, T(0), d.data.data(), cols);
        col2im_into(d, g, input.h, input.w, dinput->sample(smp));
      }
    }
  }

  grads.w1.assign(static_cast<std::size_t>(oc) * n, T(0));
  grads.w2.clear();
  grads.bias.assign(oc, T(0));
  for (int t = 0; t < nthreads; ++t) {
    for (std::size_t i = 0; i < grads.w1.size(); ++i) grads.w1[i] += acc_w1[t][i];
    for (int f = 0; f < oc; ++f) grads.bias[f] += acc_b[t][f];
  }
}

template <typename T>
LinearBackward<T> linear_backward(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                  const LinearFilterBank<T>& bank) {
  LinearBackward<T> out;
  linear_backward_into(input, upstream, bank, out.grads, &out.dinput);
  return out;
}

/// Fused volterra backward into caller-owned buffers; dinput may be null.
template <typename T>
void volterra_backward_into(const Tensor4<T>& input, const Tensor4<T>& upstream,
                            const VolterraFilterBank<T>& bank, ConvGrads<T>& grads,
                            Tensor4<T>* dinput) {
  detail::volterra_backward_impl<T>(input, upstream, bank.geom, bank.quad_mode,
                                    bank.w1.data(), bank.w2.data(), &grads, dinput);
}

}  // namespace volt
