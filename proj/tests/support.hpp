#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "volt/rng.hpp"
#include "volt/tensor.hpp"

namespace testsup {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <typename T>
double max_rel_err(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return 1e30;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

template <typename T>
double max_rel_err(const volt::Tensor4<T>& a, const volt::Tensor4<T>& b) {
  if (!a.same_shape(b)) return 1e30;
  return max_rel_err(a.data, b.data);
}

template <typename T>
void fill_uniform(std::vector<T>& v, volt::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_uniform(volt::Tensor4<T>& t, volt::Rng& rng, double lo = -1.0, double hi = 1.0) {
  fill_uniform(t.data, rng, lo, hi);
}

/// Central-difference derivative of a scalar function at each coordinate of
/// params, compared against the provided analytic gradient. Returns the
/// maximum relative error. Step scales with the parameter magnitude.
inline double fd_check(std::vector<double>& params, const std::vector<double>& analytic,
                       const std::function<double()>& loss, double h0 = 1e-5) {
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    const double h = h0 * std::max(1.0, std::abs(keep));
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double dn = loss();
    params[i] = keep;
    worst = std::max(worst, rel_err((up - dn) / (2 * h), analytic[i]));
  }
  return worst;
}

}  // namespace testsup
