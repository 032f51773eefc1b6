#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "volt/common.hpp"
#include "volt/rng.hpp"
#include "volt/tensor.hpp"

namespace volt {

/// Images as (N,3,H,W) reals in [0,1] plus integer labels in [0,K). For the
/// CIFAR-100 layout the coarse byte is retained alongside so encoding can
/// round-trip a decoded file; everything else reads `labels` only.
template <typename T>
struct LabeledImageSet {
  Tensor4<T> images;
  std::vector<int> labels;
  std::vector<int> coarse_labels;

  int count() const { return static_cast<int>(labels.size()); }
};

enum class CifarVariant { cifar10, cifar100 };

inline int cifar_classes(CifarVariant v) { return v == CifarVariant::cifar10 ? 10 : 100; }
inline int cifar_label_bytes(CifarVariant v) { return v == CifarVariant::cifar10 ? 1 : 2; }
inline int cifar_record_bytes(CifarVariant v) { return cifar_label_bytes(v) + 3072; }

/// Decodes the standard CIFAR binary layout: per record, one label byte
/// (CIFAR-10) or coarse+fine label bytes (CIFAR-100), then 3072 pixel bytes,
/// channel-planar R,G,B, row-major 32x32. Pixel byte v maps to v/255.
/// CIFAR-100 keeps the fine label as the working label. An empty file is an
/// empty set; any other size that is not a whole number of records, or a
/// working-label byte outside [0,K), is a FormatError naming the byte offset.
template <typename T = double>
LabeledImageSet<T> load_cifar_binary(const std::string& path, CifarVariant variant) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::int64_t size = static_cast<std::int64_t>(f.tellg());
  f.seekg(0);

  LabeledImageSet<T> set;
  if (size == 0) return set;
  const int rec = cifar_record_bytes(variant);
  if (size % rec != 0)
    throw FormatError(path + ": size " + std::to_string(size) +
                      " is not a multiple of the record size " + std::to_string(rec));
  const int n = static_cast<int>(size / rec);
  std::vector<unsigned char> raw(static_cast<std::size_t>(size));
  if (!f.read(reinterpret_cast<char*>(raw.data()), size))
    throw IoError("short read on " + path);

  const int k = cifar_classes(variant);
  set.images = Tensor4<T>(n, 3, 32, 32);
  set.labels.resize(n);
  if (variant == CifarVariant::cifar100) set.coarse_labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * rec;
    std::size_t off = base;
    if (variant == CifarVariant::cifar100) set.coarse_labels[i] = raw[off++];
    const int label = raw[off];
    if (label >= k)
      throw FormatError(path + ": label byte " + std::to_string(label) +
                        " at offset " + std::to_string(off) + " out of range [0," +
                        std::to_string(k) + ")");
    set.labels[i] = label;
    ++off;
    T* dst = set.images.sample(i);
    for (int p = 0; p < 3072; ++p)
      dst[p] = static_cast<T>(raw[off + p]) / T(255);
  }
  return set;
}

/// Encodes a set back to the binary layout above; pixel bytes are the
/// nearest integer of v*255, clamped to [0,255]. For CIFAR-100 the coarse
/// byte comes from coarse_labels when present, else 0.
template <typename T>
void save_cifar_binary(const LabeledImageSet<T>& set, const std::string& path,
                       CifarVariant variant) {
  const int k = cifar_classes(variant);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  std::vector<unsigned char> rec(static_cast<std::size_t>(cifar_record_bytes(variant)));
  for (int i = 0; i < set.count(); ++i) {
    if (set.labels[i] < 0 || set.labels[i] >= k)
      throw FormatError("save_cifar_binary: label " + std::to_string(set.labels[i]) +
                        " out of range [0," + std::to_string(k) + ")");
    std::size_t off = 0;
    if (variant == CifarVariant::cifar100)
      rec[off++] = static_cast<unsigned char>(
          i < static_cast<int>(set.coarse_labels.size()) ? set.coarse_labels[i] : 0);
    rec[off++] = static_cast<unsigned char>(set.labels[i]);
    const T* src = set.images.sample(i);
    for (int p = 0; p < 3072; ++p) {
      const long v = std::lround(static_cast<double>(src[p]) * 255.0);
      rec[off + p] = static_cast<unsigned char>(std::clamp(v, 0L, 255L));
    }
    f.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  if (!f) throw IoError("write failed on " + path);
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
struct NormalizationStats {
  std::vector<T> mean;  // per channel
  std::vector<T> stddev;
};

/// Per-channel mean and (population) standard deviation over every pixel of
/// the set. A constant channel has no scale to divide by and is an error.
template <typename T>
NormalizationStats<T> compute_stats(const LabeledImageSet<T>& set) {
  if (set.count() == 0) throw ShapeError("compute_stats: empty set");
  std::vector<T> mean, var;
  channel_mean_var(set.images, mean, var);
  NormalizationStats<T> stats;
  stats.mean = mean;
  stats.stddev.resize(var.size());
  for (std::size_t c = 0; c < var.size(); ++c) {
    if (var[c] <= 0)
      throw NumericError("compute_stats: channel " + std::to_string(c) +
                         " is constant, stddev would be 0");
    stats.stddev[c] = std::sqrt(var[c]);
  }
  return stats;
}

template <typename T>
void apply_normalization(LabeledImageSet<T>& set, const NormalizationStats<T>& stats) {
  const Tensor4<T>& im = set.images;
  if (static_cast<int>(stats.mean.size()) != im.c)
    throw ShapeError("apply_normalization: stats for " + std::to_string(stats.mean.size()) +
                     " channels, images have " + std::to_string(im.c));
  const std::size_t plane = static_cast<std::size_t>(im.h) * im.w;
  for (int i = 0; i < im.n; ++i)
    for (int c = 0; c < im.c; ++c) {
      T* p = set.images.sample(i) + plane * c;
      const T m = stats.mean[c], inv = T(1) / stats.stddev[c];
      for (std::size_t q = 0; q < plane; ++q) p[q] = (p[q] - m) * inv;
    }
}

template <typename T>
void invert_normalization(LabeledImageSet<T>& set, const NormalizationStats<T>& stats) {
  const Tensor4<T>& im = set.images;
  if (static_cast<int>(stats.mean.size()) != im.c)
    throw ShapeError("invert_normalization: stats for " + std::to_string(stats.mean.size()) +
                     " channels, images have " + std::to_string(im.c));
  const std::size_t plane = static_cast<std::size_t>(im.h) * im.w;
  for (int i = 0; i < im.n; ++i)
    for (int c = 0; c < im.c; ++c) {
      T* p = set.images.sample(i) + plane * c;
      const T m = stats.mean[c], s = stats.stddev[c];
      for (std::size_t q = 0; q < plane; ++q) p[q] = p[q] * s + m;
    }
}

// ---------------------------------------------------------------------------
// Augmentation

/// Mirror-without-border-duplication index: coordinate t of an image padded
/// by up to size-1 on each side maps back to |t| below 0 and to
/// 2(size-1)-t beyond the top (…2,1,0|0..size-1|size-2,size-3,…).
inline int reflect_index(int t, int size) {
  if (t < 0) return -t;
  if (t >= size) return 2 * size - 2 - t;
  return t;
}

inline constexpr int kAugmentPad = 4;

/// Train-time augmentation for one (channels,h,w) image: horizontal flip
/// with probability 1/2, reflection-padding by 4 on every side, then a
/// uniform random crop back to h x w. Draw order is pinned: flip decision,
/// row offset, column offset. src and dst must not alias.
template <typename T>
void augment_sample(const T* src, T* dst, int channels, int h, int w, Rng& rng) {
  if (h <= kAugmentPad || w <= kAugmentPad)
    throw ShapeError("augment_sample: image too small to reflect-pad by " +
                     std::to_string(kAugmentPad));
  const bool flip = rng.bernoulli(0.5);
  const int dy = rng.uniform_int(2 * kAugmentPad + 1);
  const int dx = rng.uniform_int(2 * kAugmentPad + 1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* s = src + plane * c;
    T* d = dst + plane * c;
    for (int y = 0; y < h; ++y) {
      const int sy = reflect_index(y + dy - kAugmentPad, h);
      for (int x = 0; x < w; ++x) {
        int sx = reflect_index(x + dx - kAugmentPad, w);
        if (flip) sx = w - 1 - sx;
        d[static_cast<std::size_t>(y) * w + x] = s[static_cast<std::size_t>(sy) * w + sx];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic datasets

enum class SyntheticMode {
  /// K Gaussian class templates plus pixel noise; linearly separable enough
  /// for smoke tests.
  gaussian,
  /// Two classes whose label is the sign of the product of two latent +-1
  /// factors, carried by channels 0 and 1. Per-pixel class means coincide,
  /// so no linear functional of the pixels separates the classes; the
  /// per-location channel product does.
  quadratic_rule,
};

/// CIFAR-shaped synthetic data (count,3,32,32). Bit-identical for a fixed
/// (classes, count, seed, mode).
template <typename T = double>
LabeledImageSet<T> make_synthetic_set(int classes, int count, std::uint64_t seed,
                                      SyntheticMode mode = SyntheticMode::gaussian) {
  if (classes < 2) throw ShapeError("make_synthetic_set: need at least 2 classes");
  if (count < 1) throw ShapeError("make_synthetic_set: count must be positive");
  if (mode == SyntheticMode::quadratic_rule && classes != 2)
    throw ShapeError("make_synthetic_set: quadratic_rule mode is two-class");

  LabeledImageSet<T> set;
  set.images = Tensor4<T>(count, 3, 32, 32);
  set.labels.resize(count);
  Rng rng(seed);

  if (mode == SyntheticMode::gaussian) {
    std::vector<double> templates(static_cast<std::size_t>(classes) * 3 * 32 * 32);
    for (auto& v : templates) v = 0.5 + 0.18 * rng.normal();
    for (int i = 0; i < count; ++i) {
      const int y = rng.uniform_int(classes);
      set.labels[i] = y;
      T* img = set.images.sample(i);
      const double* t = templates.data() + static_cast<std::size_t>(y) * 3 * 32 * 32;
      for (std::size_t p = 0; p < 3 * 32 * 32; ++p) {
        const double v = t[p] + 0.12 * rng.normal();
        img[p] = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
    return set;
  }

  // quadratic_rule: channels 0 and 1 share a white latent field xi, scaled
  // by independent global signs u and v; label = [u*v > 0]. Per pixel,
  //   ch0 = 0.5 + a*m*(u*xi + tau*eps0),
  //   ch1 = 0.5 + a*m*(v*chi*xi + tau*eps1),   chi = checkerboard(+-1),
  // and channel 2 carries an independent field with the same marginal. Since
  // u*xi and chi*xi are each distributed like xi, every fixed functional that
  // is linear in the pixels has a label-independent distribution; the label
  // only appears in the co-located channel products, whose per-pixel mean is
  // u*v*chi*(a*m)^2, well below the per-pixel noise. The checkerboard keeps
  // the modulated product field zero-mean under any plain spatial average, so
  // no aggregate variance statistic separates the classes either; a reader
  // has to form local products and demodulate the sign pattern. The
  // m ~ U[0.7,1.3] amplitude jitter is label-independent.
  const double a = 0.04, tau = 4.0;
  for (int i = 0; i < count; ++i) {
    const double u = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double m = rng.uniform(0.7, 1.3);
    set.labels[i] = u * v > 0 ? 1 : 0;
    T* img = set.images.sample(i);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * 32 + x;
        const double chi = ((x + y) & 1) ? -1.0 : 1.0;
        const double xi = rng.normal();
        const double c0 = u * xi + tau * rng.normal();
        const double c1 = v * chi * xi + tau * rng.normal();
        const double c2 = rng.normal() + tau * rng.normal();
        img[p] = static_cast<T>(std::clamp(0.5 + a * m * c0, 0.0, 1.0));
        img[32 * 32 + p] = static_cast<T>(std::clamp(0.5 + a * m * c1, 0.0, 1.0));
        img[2 * 32 * 32 + p] = static_cast<T>(std::clamp(0.5 + a * m * c2, 0.0, 1.0));
      }
  }
  return set;
}

}  // namespace volt
