#pragma once

#include <vector>

#include "volt/conv.hpp"
#include "volt/tensor.hpp"

/// Serial reference implementations of every convolution op, written as the
/// defining sums: patches are gathered by direct indexing and all products
/// are accumulated element by element. No unfolding, no matrix products, no
/// threading. These exist to pin down the semantics; the fast kernels in
/// conv.hpp must agree with them to near machine precision and the test suite
/// enforces that.
namespace volt::ref {

/// Copies patch (p, q) into x, channel-major then kernel-row then kernel-col.
/// Out-of-image taps read as zero.
template <typename T>
void gather_patch(const T* img, int channels, int h, int w, const ConvGeometry& g,
                  int p, int q, T* x) {
  int idx = 0;
  for (int c = 0; c < channels; ++c)
    for (int kh = 0; kh < g.kernel_h; ++kh)
      for (int kw = 0; kw < g.kernel_w; ++kw) {
        const int r = p * g.stride - g.pad + kh;
        const int s = q * g.stride - g.pad + kw;
        x[idx++] = (r >= 0 && r < h && s >= 0 && s < w)
                       ? img[(static_cast<std::size_t>(c) * h + r) * w + s]
                       : T(0);
      }
}

template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& input, const LinearFilterBank<T>& bank) {
  const ConvGeometry& g = bank.geom;
  const int ho = g.out_h(input.h), wo = g.out_w(input.w), n = g.patch_len();
  Tensor4<T> out(input.n, g.out_channels, ho, wo);
  std::vector<T> x(n);
  for (int smp = 0; smp < input.n; ++smp)
    for (int p = 0; p < ho; ++p)
      for (int q = 0; q < wo; ++q) {
        gather_patch(input.sample(smp), input.c, input.h, input.w, g, p, q, x.data());
        for (int f = 0; f < g.out_channels; ++f) {
          const T* w1 = bank.filter_w1(f);
          T y = bank.bias[f];
          for (int i = 0; i < n; ++i) y += w1[i] * x[i];
          out.at(smp, f, p, q) = y;
        }
      }
  return out;
}

template <typename T>
Tensor4<T> volterra_forward(const Tensor4<T>& input, const VolterraFilterBank<T>& bank) {
  const ConvGeometry& g = bank.geom;
  const int ho = g.out_h(input.h), wo = g.out_w(input.w), n = g.patch_len();
  Tensor4<T> out(input.n, g.out_channels, ho, wo);
  std::vector<T> x(n);
  for (int smp = 0; smp < input.n; ++smp)
    for (int p = 0; p < ho; ++p)
      for (int q = 0; q < wo; ++q) {
        gather_patch(input.sample(smp), input.c, input.h, input.w, g, p, q, x.data());
        for (int f = 0; f < g.out_channels; ++f) {
          const T* w1 = bank.filter_w1(f);
          const T* w2 = bank.filter_w2(f);
          T y = bank.bias[f];
          for (int i = 0; i < n; ++i) y += w1[i] * x[i];
          for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) y += w2[packed_index(i, j, n)] * x[i] * x[j];
          out.at(smp, f, p, q) = y;
        }
      }
  return out;
}

template <typename T>
ConvGrads<T> volterra_backward_weights(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                       const ConvGeometry& g, QuadMode mode = QuadMode::full) {
  const int ho = g.out_h(input.h), wo = g.out_w(input.w), n = g.patch_len();
  const int qn = quad_len(n);
  ConvGrads<T> grads;
  grads.w1.assign(static_cast<std::size_t>(g.out_channels) * n, T(0));
  grads.w2.assign(static_cast<std::size_t>(g.out_channels) * qn, T(0));
  grads.bias.assign(g.out_channels, T(0));
  std::vector<T> x(n);
  for (int smp = 0; smp < input.n; ++smp)
    for (int p = 0; p < ho; ++p)
      for (int q = 0; q < wo; ++q) {
        gather_patch(input.sample(smp), input.c, input.h, input.w, g, p, q, x.data());
        for (int f = 0; f < g.out_channels; ++f) {
          const T gv = upstream.at(smp, f, p, q);
          T* gw1 = grads.w1.data() + static_cast<std::size_t>(f) * n;
          T* gw2 = grads.w2.data() + static_cast<std::size_t>(f) * qn;
          for (int i = 0; i < n; ++i) gw1[i] += gv * x[i];
          for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j)
              if (quad_pair_active(g, mode, i, j))
                gw2[packed_index(i, j, n)] += gv * x[i] * x[j];
          grads.bias[f] += gv;
        }
      }
  return grads;
}

/// dE/dx_k for one patch is w1_k plus the symmetric application of the packed
/// quadratic weights, the diagonal entering twice; contributions from every
/// window covering a pixel are summed.
template <typename T>
Tensor4<T> volterra_backward_input(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                   const VolterraFilterBank<T>& bank) {
  const ConvGeometry& g = bank.geom;
  const int ho = g.out_h(input.h), wo = g.out_w(input.w), n = g.patch_len();
  Tensor4<T> dinput(input.n, input.c, input.h, input.w);
  std::vector<T> x(n), d(n);
  for (int smp = 0; smp < input.n; ++smp)
    for (int p = 0; p < ho; ++p)
      for (int q = 0; q < wo; ++q) {
        gather_patch(input.sample(smp), input.c, input.h, input.w, g, p, q, x.data());
        std::fill(d.begin(), d.end(), T(0));
        for (int f = 0; f < g.out_channels; ++f) {
          const T gv = upstream.at(smp, f, p, q);
          const T* w1 = bank.filter_w1(f);
          const T* w2 = bank.filter_w2(f);
          for (int k = 0; k < n; ++k) {
            T dk = w1[k];
            for (int i = 0; i <= k; ++i) dk += w2[packed_index(i, k, n)] * x[i];
            for (int j = k; j < n; ++j) dk += w2[packed_index(k, j, n)] * x[j];
            d[k] += gv * dk;
          }
        }
        int idx = 0;
        for (int c = 0; c < input.c; ++c)
          for (int kh = 0; kh < g.kernel_h; ++kh)
            for (int kw = 0; kw < g.kernel_w; ++kw, ++idx) {
              const int r = p * g.stride - g.pad + kh;
              const int s = q * g.stride - g.pad + kw;
              if (r >= 0 && r < input.h && s >= 0 && s < input.w)
                dinput.at(smp, c, r, s) += d[idx];
            }
      }
  return dinput;
}

template <typename T>
LinearBackward<T> linear_backward(const Tensor4<T>& input, const Tensor4<T>& upstream,
                                  const LinearFilterBank<T>& bank) {
  const ConvGeometry& g = bank.geom;
  const int ho = g.out_h(input.h), wo = g.out_w(input.w), n = g.patch_len();
  LinearBackward<T> out;
  out.grads.w1.assign(static_cast<std::size_t>(g.out_channels) * n, T(0));
  out.grads.bias.assign(g.out_channels, T(0));
  out.dinput = Tensor4<T>(input.n, input.c, input.h, input.w);
  std::vector<T> x(n);
  for (int smp = 0; smp < input.n; ++smp)
    for (int p = 0; p < ho; ++p)
      for (int q = 0; q < wo; ++q) {
        gather_patch(input.sample(smp), input.c, input.h, input.w, g, p, q, x.data());
        for (int f = 0; f < g.out_channels; ++f) {
          const T gv = upstream.at(smp, f, p, q);
          const T* w1 = bank.filter_w1(f);
          T* gw1 = out.grads.w1.data() + static_cast<std::size_t>(f) * n;
          for (int i = 0; i < n; ++i) gw1[i] += gv * x[i];
          out.grads.bias[f] += gv;
          int idx = 0;
          for (int c = 0; c < input.c; ++c)
            for (int kh = 0; kh < g.kernel_h; ++kh)
              for (int kw = 0; kw < g.kernel_w; ++kw, ++idx) {
                const int r = p * g.stride - g.pad + kh;
                const int s = q * g.stride - g.pad + kw;
                if (r >= 0 && r < input.h && s >= 0 && s < input.w)
                  out.dinput.at(smp, c, r, s) += gv * w1[idx];
              }
        }
      }
  return out;
}

}  // namespace volt::ref
