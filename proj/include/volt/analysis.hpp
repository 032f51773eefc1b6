#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "volt/common.hpp"
#include "volt/conv.hpp"
#include "volt/tensor.hpp"

namespace volt {

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

/// Eigenpairs of a symmetric matrix, ascending by eigenvalue. vectors is
/// row-major n x n with column j holding the j-th eigenvector, so
/// A = V diag(values) V^T.
template <typename T>
struct EigenSym {
  int n = 0;
  std::vector<T> values;
  std::vector<T> vectors;
};

template <typename T>
EigenSym<T> jacobi_eigensym(const std::vector<T>& a, int n) {
  if (n < 1 || static_cast<std::size_t>(n) * n != a.size())
    throw ShapeError("jacobi_eigensym: matrix must be n x n");
  std::vector<T> b = a;
  std::vector<T> v(static_cast<std::size_t>(n) * n, T(0));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = T(1);
  const auto at = [n](std::vector<T>& m, int r, int c) -> T& {
    return m[static_cast<std::size_t>(r) * n + c];
  };

  double scale = 0;
  for (const T x : a) scale = std::max(scale, std::abs(static_cast<double>(x)));
  const double stop = std::max(scale, 1.0) * 1e-15;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q)
        off = std::max(off, std::abs(static_cast<double>(at(b, p, q))));
    if (off <= stop) {
      EigenSym<T> out;
      out.n = n;
      out.values.resize(n);
      for (int i = 0; i < n; ++i) out.values[i] = at(b, i, i);
      std::vector<int> idx(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(),
                [&](int x, int y) { return out.values[x] < out.values[y]; });
      std::vector<T> sv(n), svec(static_cast<std::size_t>(n) * n);
      for (int j = 0; j < n; ++j) {
        sv[j] = out.values[idx[j]];
        for (int i = 0; i < n; ++i)
          svec[static_cast<std::size_t>(i) * n + j] = at(v, i, idx[j]);
      }
      out.values = std::move(sv);
      out.vectors = std::move(svec);
      return out;
    }
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const T bpq = at(b, p, q);
        if (std::abs(static_cast<double>(bpq)) <= stop * 1e-3) continue;
        const T theta = (at(b, q, q) - at(b, p, p)) / (2 * bpq);
        const T t = (theta >= 0 ? T(1) : T(-1)) /
                    (std::abs(theta) + std::sqrt(theta * theta + T(1)));
        const T c = T(1) / std::sqrt(t * t + T(1));
        const T s = t * c;
        for (int k = 0; k < n; ++k) {
          const T bkp = at(b, k, p), bkq = at(b, k, q);
          at(b, k, p) = c * bkp - s * bkq;
          at(b, k, q) = s * bkp + c * bkq;
        }
        for (int k = 0; k < n; ++k) {
          const T bpk = at(b, p, k), bqk = at(b, q, k);
          at(b, p, k) = c * bpk - s * bqk;
          at(b, q, k) = s * bpk + c * bqk;
        }
        for (int k = 0; k < n; ++k) {
          const T vkp = at(v, k, p), vkq = at(v, k, q);
          at(v, k, p) = c * vkp - s * vkq;
          at(v, k, q) = s * vkp + c * vkq;
        }
      }
  }
  throw NumericError("jacobi_eigensym: no convergence in 64 sweeps");
}

// ---------------------------------------------------------------------------
// Weight slices

/// One Volterra filter rearranged for inspection: the linear weight vector
/// and, per patch element i, the interaction vector q_i with q_i[j] equal to
/// the packed quadratic weight of the unordered pair {i, j}. Grid dims record
/// how a patch index maps to (channel, ky, kx): p = (c*kh + ky)*kw + kx.
template <typename T>
struct WeightSlices {
  int n = 0, channels = 0, kh = 0, kw = 0;
  std::vector<T> linear;
  std::vector<std::vector<T>> quad;
};

template <typename T>
WeightSlices<T> extract_weight_slices(const VolterraFilterBank<T>& bank, int filter) {
  const ConvGeometry& g = bank.geom;
  if (filter < 0 || filter >= g.out_channels)
    throw ShapeError("extract_weight_slices: filter index out of range");
  WeightSlices<T> out;
  out.n = g.patch_len();
  out.channels = g.in_channels;
  out.kh = g.kernel_h;
  out.kw = g.kernel_w;
  const T* w1 = bank.filter_w1(filter);
  const T* w2 = bank.filter_w2(filter);
  out.linear.assign(w1, w1 + out.n);
  out.quad.assign(out.n, std::vector<T>(out.n));
  for (int i = 0; i < out.n; ++i)
    for (int j = 0; j < out.n; ++j)
      out.quad[i][j] = w2[packed_index(std::min(i, j), std::max(i, j), out.n)];
  return out;
}

// ---------------------------------------------------------------------------
// Histograms

struct Histogram {
  std::vector<double> lo, hi;
  std::vector<std::int64_t> count;
  double mean = 0, stddev = 0;
};

template <typename T>
Histogram histogram_values(const std::vector<T>& vals, int bins = 64) {
  if (vals.empty()) throw ShapeError("histogram_values: no values");
  if (bins < 1) throw ShapeError("histogram_values: bins must be positive");
  double mn = vals[0], mx = vals[0], sum = 0;
  for (const T v : vals) {
    mn = std::min(mn, static_cast<double>(v));
    mx = std::max(mx, static_cast<double>(v));
    sum += static_cast<double>(v);
  }
  Histogram h;
  h.mean = sum / vals.size();
  double sq = 0;
  for (const T v : vals) {
    const double d = v - h.mean;
    sq += d * d;
  }
  h.stddev = std::sqrt(sq / vals.size());

  if (mn == mx) {  // all values identical: one degenerate bin
    h.lo = {mn};
    h.hi = {mx};
    h.count = {static_cast<std::int64_t>(vals.size())};
    return h;
  }
  h.lo.resize(bins);
  h.hi.resize(bins);
  h.count.assign(bins, 0);
  const double width = (mx - mn) / bins;
  for (int i = 0; i < bins; ++i) {
    h.lo[i] = mn + i * width;
    h.hi[i] = i + 1 == bins ? mx : mn + (i + 1) * width;
  }
  for (const T v : vals) {
    int i = static_cast<int>((v - mn) / width);
    i = std::clamp(i, 0, bins - 1);
    ++h.count[i];
  }
  return h;
}

enum class WeightPart { linear, quadratic };

template <typename T>
Histogram weight_histogram(const VolterraFilterBank<T>& bank, WeightPart part,
                           int bins = 64) {
  return histogram_values(part == WeightPart::linear ? bank.w1 : bank.w2, bins);
}

inline void write_histogram_csv(const std::string& path, const Histogram& h) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "bin_lo,bin_hi,count\n";
  char buf[96];
  for (std::size_t i = 0; i < h.count.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%lld\n", h.lo[i], h.hi[i],
                  static_cast<long long>(h.count[i]));
    os << buf;
  }
  if (!os) throw IoError("write failed on " + path);
}

// ---------------------------------------------------------------------------
// Optimal stimuli

namespace detail {
template <typename T>
double vec_norm(const std::vector<T>& v) {
  double s = 0;
  for (const T x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}
}  // namespace detail

/// Closed form: the norm-rho input maximizing w1.x is rho*w1/|w1|. All
/// returns across rho are parallel by construction.
template <typename T>
std::vector<T> linear_optimal_stimulus(const std::vector<T>& w1, T rho) {
  if (rho <= T(0)) throw ShapeError("linear_optimal_stimulus: rho must be positive");
  const double norm = detail::vec_norm(w1);
  if (norm == 0) throw NumericError("linear_optimal_stimulus: w1 is zero, no direction");
  std::vector<T> x(w1.size());
  for (std::size_t i = 0; i < w1.size(); ++i)
    x[i] = static_cast<T>(rho * w1[i] / norm);
  return x;
}

template <typename T>
struct StimulusResult {
  std::vector<T> x;
  T lambda = 0;   // Lagrange multiplier of the norm constraint
  T response = 0; // x^T W2 x + w1^T x (no bias)
  bool hard_case = false;
  int iterations = 0;
};

/// Maximizes x^T W2 x + w1^T x over the sphere |x| = rho, where W2 is the
/// symmetrized unpacking of the packed quadratic weights. The stationarity
/// system (2*lambda*I - 2*W2) x = w1 is solved in the eigenbasis; the
/// multiplier comes from a 1-D secular-equation root solve to the right of
/// the top eigenvalue (log-domain bisection on the shift s = lambda -
/// lambda_max), with the degenerate branch (w1 orthogonal to the leading
/// eigenspace) handled by adding the missing norm along the top eigenvector.
template <typename T>
StimulusResult<T> quadratic_optimal_stimulus(const std::vector<T>& w1,
                                             const std::vector<T>& w2_packed, int n,
                                             T rho) {
  if (rho <= T(0)) throw ShapeError("quadratic_optimal_stimulus: rho must be positive");
  if (static_cast<int>(w1.size()) != n ||
      static_cast<int>(w2_packed.size()) != quad_len(n))
    throw ShapeError("quadratic_optimal_stimulus: weight sizes do not match n");

  const std::vector<T> a = sym_unpack(w2_packed.data(), n);
  const EigenSym<T> eig = jacobi_eigensym(a, n);
  const double lam_max = eig.values[n - 1];

  // beta = V^T w1; d_i = lam_max - lam_i >= 0
  std::vector<double> beta(n, 0.0), d(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i)
      beta[j] += static_cast<double>(eig.vectors[static_cast<std::size_t>(i) * n + j]) *
                 w1[i];
    d[j] = lam_max - static_cast<double>(eig.values[j]);
  }
  const double bnorm = detail::vec_norm(w1);
  const double beta_tol = 1e-12 * std::max(1.0, bnorm);
  for (double& bj : beta)
    if (std::abs(bj) < beta_tol) bj = 0.0;

  const double rho2 = static_cast<double>(rho) * rho;
  const auto g = [&](double s) {
    double sum = 0;
    for (int j = 0; j < n; ++j) {
      if (beta[j] == 0.0) continue;
      const double c = beta[j] / (2.0 * (s + d[j]));
      sum += c * c;
    }
    return sum;
  };

  StimulusResult<T> out;
  const double s_floor = 1e-30 * std::max(1.0, std::abs(lam_max));

  std::vector<double> coef(n, 0.0);
  double s_star = 0.0;
  if (g(s_floor) < rho2) {
    // Hard case: the secular function cannot reach rho even at the top
    // eigenvalue, so the remaining norm goes along the top eigenvector.
    out.hard_case = true;
    double have = 0;
    for (int j = 0; j < n; ++j) {
      if (beta[j] == 0.0 || d[j] <= 0.0) continue;
      coef[j] = beta[j] / (2.0 * d[j]);
      have += coef[j] * coef[j];
    }
    coef[n - 1] += std::sqrt(std::max(0.0, rho2 - have));
  } else {
    // The root satisfies s* <= |w1|/(2 rho) since g(s) <= (|w1|/(2s))^2; the
    // relative bump keeps the endpoint strictly above it in floating point.
    double u_lo = std::log(s_floor);
    double u_hi = std::log(bnorm / (2.0 * static_cast<double>(rho)) * (1.0 + 1e-6) +
                           1e-3 * std::max(1.0, std::abs(lam_max)));
    if (!(g(std::exp(u_hi)) < rho2))
      throw NumericError("quadratic_optimal_stimulus: invalid secular bracket [" +
                         std::to_string(lam_max + std::exp(u_lo)) + ", " +
                         std::to_string(lam_max + std::exp(u_hi)) + "]");
    int it = 0;
    for (; it < 200 && u_hi - u_lo > 1e-15; ++it) {
      const double mid = 0.5 * (u_lo + u_hi);
      (g(std::exp(mid)) >= rho2 ? u_lo : u_hi) = mid;
    }
    if (u_hi - u_lo > 1e-12)
      throw NumericError("quadratic_optimal_stimulus: secular solve did not converge "
                         "in bracket [" +
                         std::to_string(lam_max + std::exp(u_lo)) + ", " +
                         std::to_string(lam_max + std::exp(u_hi)) + "]");
    out.iterations = it;
    s_star = std::exp(0.5 * (u_lo + u_hi));
    for (int j = 0; j < n; ++j)
      if (beta[j] != 0.0) coef[j] = beta[j] / (2.0 * (s_star + d[j]));
  }

  out.lambda = static_cast<T>(lam_max + s_star);
  out.x.assign(n, T(0));
  for (int i = 0; i < n; ++i) {
    double xi = 0;
    for (int j = 0; j < n; ++j)
      xi += static_cast<double>(eig.vectors[static_cast<std::size_t>(i) * n + j]) *
            coef[j];
    out.x[i] = static_cast<T>(xi);
  }

  double quad = 0, lin = 0;
  for (int i = 0; i < n; ++i) {
    lin += static_cast<double>(w1[i]) * out.x[i];
    double row = 0;
    for (int j = 0; j < n; ++j)
      row += static_cast<double>(a[static_cast<std::size_t>(i) * n + j]) * out.x[j];
    quad += static_cast<double>(out.x[i]) * row;
  }
  out.response = static_cast<T>(quad + lin);
  return out;
}

// ---------------------------------------------------------------------------
// Response profiles

struct ResponseRow {
  double rho = 0;
  double y1 = 0;  // full filter at x_o (bias included)
  double y2 = 0;  // linear term only at x_o
  double y3 = 0;  // linear term only at x_l
  double y4 = 0;  // full filter at x_l (bias included)
};

/// Mean patch L2 norm (root-mean-square over all patches of all samples),
/// the natural scale for the stimulus-norm grid.
template <typename T>
double rms_patch_norm(const Tensor4<T>& images, const ConvGeometry& geom) {
  PatchMatrix<T> patches;
  double sumsq = 0;
  std::int64_t cols = 0;
  for (int i = 0; i < images.n; ++i) {
    im2col_into(images.sample(i), images.c, images.h, images.w, geom, patches);
    for (const T v : patches.data) sumsq += static_cast<double>(v) * v;
    cols += patches.cols;
  }
  if (cols == 0) throw ShapeError("rms_patch_norm: no patches");
  return std::sqrt(sumsq / cols);
}

/// 16 log-spaced norms spanning [0.1, 10] x scale.
inline std::vector<double> default_rho_grid(double scale, int count = 16) {
  if (scale <= 0) throw ShapeError("default_rho_grid: scale must be positive");
  if (count < 2) throw ShapeError("default_rho_grid: need at least 2 points");
  std::vector<double> grid(count);
  const double lo = std::log(0.1 * scale), hi = std::log(10.0 * scale);
  for (int i = 0; i < count; ++i)
    grid[i] = std::exp(lo + (hi - lo) * i / (count - 1));
  return grid;
}

/// Table-4 style four-way sweep. Bias enters the full-filter responses y1,y4
/// and is excluded from the linear-term responses y2,y3.
template <typename T>
std::vector<ResponseRow> response_profile(const VolterraFilterBank<T>& bank, int filter,
                                          const std::vector<double>& rho_grid) {
  const ConvGeometry& geomv = bank.geom;
  if (filter < 0 || filter >= geomv.out_channels)
    throw ShapeError("response_profile: filter index out of range");
  const int n = geomv.patch_len();
  const std::vector<T> w1(bank.filter_w1(filter), bank.filter_w1(filter) + n);
  const std::vector<T> w2(bank.filter_w2(filter), bank.filter_w2(filter) + quad_len(n));
  const std::vector<T> a = sym_unpack(w2.data(), n);
  const double bias = static_cast<double>(bank.bias[filter]);

  const auto responses = [&](const std::vector<T>& x, double& full, double& lin_only) {
    double quad = 0, lin = 0;
    for (int i = 0; i < n; ++i) {
      lin += static_cast<double>(w1[i]) * x[i];
      double row = 0;
      for (int j = 0; j < n; ++j)
        row += static_cast<double>(a[static_cast<std::size_t>(i) * n + j]) * x[j];
      quad += static_cast<double>(x[i]) * row;
    }
    full = quad + lin + bias;
    lin_only = lin;
  };

  std::vector<ResponseRow> rows;
  rows.reserve(rho_grid.size());
  for (const double rho : rho_grid) {
    const auto xo = quadratic_optimal_stimulus(w1, w2, n, static_cast<T>(rho));
    const auto xl = linear_optimal_stimulus(w1, static_cast<T>(rho));
    ResponseRow r;
    r.rho = rho;
    double lin_only = 0;
    responses(xo.x, r.y1, lin_only);
    r.y2 = lin_only;
    responses(xl, r.y4, lin_only);
    r.y3 = lin_only;
    rows.push_back(r);
  }
  return rows;
}

inline void write_profile_csv(const std::string& path,
                              const std::vector<ResponseRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "rho,y1,y2,y3,y4\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.rho, r.y1,
                  r.y2, r.y3, r.y4);
    os << buf;
  }
  if (!os) throw IoError("write failed on " + path);
}

// ---------------------------------------------------------------------------
// Plot and image emitters

namespace detail {

inline std::string svg_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

/// Four-curve response plot, log-rho on x. Self-contained SVG.
inline void write_profile_svg(const std::string& path,
                              const std::vector<ResponseRow>& rows) {
  if (rows.size() < 2) throw ShapeError("write_profile_svg: need at least 2 rows");
  const double W = 720, H = 480, ml = 70, mr = 160, mt = 30, mb = 50;
  double ymin = rows[0].y1, ymax = rows[0].y1;
  for (const auto& r : rows)
    for (const double y : {r.y1, r.y2, r.y3, r.y4}) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (ymin == ymax) {
    ymin -= 1;
    ymax += 1;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double xmin = std::log(rows.front().rho), xmax = std::log(rows.back().rho);
  const auto px = [&](double rho) {
    return ml + (std::log(rho) - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  const auto py = [&](double y) {
    return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb);
  };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<!-- bias convention: included in y1 and y4 (full filter), excluded from "
        "y2 and y3 (linear term only) -->\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
     << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
     << H - mb << "\" stroke=\"black\"/>\n";

  for (int i = 0; i < 4; ++i) {
    const double rho = std::exp(xmin + (xmax - xmin) * i / 3.0);
    os << "<text x=\"" << px(rho) << "\" y=\"" << H - mb + 18
       << "\" text-anchor=\"middle\">" << detail::svg_num(rho) << "</text>\n";
    const double y = ymin + (ymax - ymin) * i / 3.0;
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
       << "\" text-anchor=\"end\">" << detail::svg_num(y) << "</text>\n";
  }
  os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\">stimulus norm rho (log scale)</text>\n";

  const char* colors[4] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
  const char* names[4] = {"y1: full at x_o", "y2: linear at x_o",
                          "y3: linear at x_l", "y4: full at x_l"};
  for (int c = 0; c < 4; ++c) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[c]
       << "\" stroke-width=\"2\" points=\"";
    for (const auto& r : rows) {
      const double y = c == 0 ? r.y1 : c == 1 ? r.y2 : c == 2 ? r.y3 : r.y4;
      os << detail::svg_num(px(r.rho)) << "," << detail::svg_num(py(y)) << " ";
    }
    os << "\"/>\n";
    os << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << mt + 20 * c + 10 << "\" x2=\""
       << W - mr + 36 << "\" y2=\"" << mt + 20 * c + 10 << "\" stroke=\"" << colors[c]
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - mr + 42 << "\" y=\"" << mt + 20 * c + 14 << "\">"
       << names[c] << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw IoError("write failed on " + path);
}

/// 8-bit binary PGM, min-max normalized; the normalization constants go to a
/// sidecar text file at path + ".txt" so values can be recovered.
template <typename T>
void write_pgm(const std::string& path, const std::vector<T>& vals, int width,
               int height) {
  if (static_cast<std::size_t>(width) * height != vals.size() || width < 1)
    throw ShapeError("write_pgm: dimensions do not match value count");
  double mn = vals[0], mx = vals[0];
  for (const T v : vals) {
    mn = std::min(mn, static_cast<double>(v));
    mx = std::max(mx, static_cast<double>(v));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "P5\n" << width << " " << height << "\n255\n";
  const double span = mx > mn ? mx - mn : 1.0;
  for (const T v : vals) {
    const int g = static_cast<int>(std::lround((v - mn) / span * 255.0));
    os.put(static_cast<char>(std::clamp(g, 0, 255)));
  }
  if (!os) throw IoError("write failed on " + path);

  std::ofstream meta(path + ".txt", std::ios::trunc);
  char buf[120];
  std::snprintf(buf, sizeof(buf), "min %.17g\nmax %.17g\ngray 0 = min, 255 = max\n",
                mn, mx);
  meta << buf;
}

namespace detail {

/// Lays a slice out as kh rows by kw*channels columns (channel planes side
/// by side), matching the patch index convention p = (c*kh + ky)*kw + kx.
template <typename T>
std::vector<T> slice_grid(const std::vector<T>& slice, int channels, int kh, int kw) {
  std::vector<T> img(static_cast<std::size_t>(kh) * kw * channels);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < kh; ++y)
      for (int x = 0; x < kw; ++x)
        img[static_cast<std::size_t>(y) * (kw * channels) + c * kw + x] =
            slice[static_cast<std::size_t>(c * kh + y) * kw + x];
  return img;
}

}  // namespace detail

/// One PGM per slice: <prefix>_linear.pgm and <prefix>_q<i>.pgm.
template <typename T>
std::vector<std::string> write_slice_pgms(const std::string& prefix,
                                          const WeightSlices<T>& s) {
  std::vector<std::string> paths;
  const int w = s.kw * s.channels, h = s.kh;
  paths.push_back(prefix + "_linear.pgm");
  write_pgm(paths.back(), detail::slice_grid(s.linear, s.channels, s.kh, s.kw), w, h);
  for (int i = 0; i < s.n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "_q%02d.pgm", i);
    paths.push_back(prefix + name);
    write_pgm(paths.back(), detail::slice_grid(s.quad[i], s.channels, s.kh, s.kw), w, h);
  }
  return paths;
}

/// All slices of one filter on a single page; every tile min-max normalized
/// independently, mirroring the PGM emitter.
template <typename T>
void write_slice_contact_sheet_svg(const std::string& path, const WeightSlices<T>& s) {
  const int cell = 14, gapx = 10, gapy = 24;
  const int gw = s.kw * s.channels, gh = s.kh;
  const int per_row = 7;
  const int tiles = 1 + s.n;
  const int rows = (tiles + per_row - 1) / per_row;
  const double W = per_row * (gw * cell + gapx) + gapx;
  const double H = rows * (gh * cell + gapy) + gapy + 10;

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H
     << "\" font-family=\"sans-serif\" font-size=\"9\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const auto tile = [&](const std::vector<T>& slice, int index, const std::string& label) {
    const auto img = detail::slice_grid(slice, s.channels, s.kh, s.kw);
    double mn = img[0], mx = img[0];
    for (const T v : img) {
      mn = std::min(mn, static_cast<double>(v));
      mx = std::max(mx, static_cast<double>(v));
    }
    const double span = mx > mn ? mx - mn : 1.0;
    const double ox = gapx + (index % per_row) * (gw * cell + gapx);
    const double oy = gapy + (index / per_row) * (gh * cell + gapy);
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        const int g = static_cast<int>(
            std::lround((img[static_cast<std::size_t>(y) * gw + x] - mn) / span * 255));
        os << "<rect x=\"" << ox + x * cell << "\" y=\"" << oy + y * cell
           << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << g
           << "," << g << "," << g << ")\"/>\n";
      }
    os << "<text x=\"" << ox << "\" y=\"" << oy - 4 << "\">" << label << "</text>\n";
  };

  tile(s.linear, 0, "w1");
  for (int i = 0; i < s.n; ++i) tile(s.quad[i], i + 1, "q" + std::to_string(i));
  os << "</svg>\n";
  if (!os) throw IoError("write failed on " + path);
}

}  // namespace volt
