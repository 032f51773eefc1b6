#pragma once

#include <atomic>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace volt {

/// Mismatched dimensions, incompatible geometries, impossible output shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed external data: dataset files, checkpoints, config files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Arithmetic failure: overflow, non-finite values, solver non-convergence.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{0};  // 0 = library default (all cores)
  return n;
}
}  // namespace detail

/// Caps the worker count for all parallel kernels. n <= 1 forces serial
/// execution. Reductions have a fixed per-owner order, so results are
/// reproducible for any fixed thread count.
inline void set_num_threads(int n) {
  detail::thread_count().store(n < 0 ? 0 : n);
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#endif
}

inline int num_threads() {
  int n = detail::thread_count().load();
  if (n >= 1) return n;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace volt
