#pragma once

#include <cstdlib>
#include <cstring>

#if defined(__unix__) || defined(__APPLE__)
#include <dlfcn.h>
#define VOLT_HAS_DLOPEN 1
#endif

namespace volt {
namespace detail {

// cblas constants
inline constexpr int kRowMajor = 101;
inline constexpr int kNoTrans = 111;
inline constexpr int kTrans = 112;

// OpenBLAS is loaded at runtime rather than linked. Its core-type detection
// runs in a library constructor, which on virtualized CPUs with unrecognized
// CPUID can fall back to a generic SSE kernel; loading after adjusting
// OPENBLAS_CORETYPE picks the vectorized kernels. A portable fallback below
// keeps the library functional with no BLAS installed (VOLT_NO_BLAS=1 forces
// it, mainly for tests).
struct BlasRuntime {
  using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*,
                            int, const float*, int, float, float*, int);
  using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*,
                            int, const double*, int, double, double*, int);
  sgemm_fn sgemm = nullptr;
  dgemm_fn dgemm = nullptr;

  BlasRuntime() {
#ifdef VOLT_HAS_DLOPEN
    if (std::getenv("VOLT_NO_BLAS")) return;
#if defined(__x86_64__)
    if (!std::getenv("OPENBLAS_CORETYPE") && __builtin_cpu_supports("avx512f"))
      ::setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
#endif
    for (const char* name :
         {"libopenblas.so.0", "libopenblas.so", "libopenblas.dylib"}) {
      handle_ = ::dlopen(name, RTLD_NOW | RTLD_LOCAL);
      if (handle_) break;
    }
    if (!handle_) return;
    sgemm = reinterpret_cast<sgemm_fn>(::dlsym(handle_, "cblas_sgemm"));
    dgemm = reinterpret_cast<dgemm_fn>(::dlsym(handle_, "cblas_dgemm"));
    // Threading is managed by the caller (parallelism lives above the GEMMs),
    // so BLAS-internal threads are pinned to one.
    if (auto set_threads =
            reinterpret_cast<void (*)(int)>(::dlsym(handle_, "openblas_set_num_threads")))
      set_threads(1);
#endif
  }

 private:
#ifdef VOLT_HAS_DLOPEN
  void* handle_ = nullptr;
#endif
};

inline const BlasRuntime& blas() {
  static BlasRuntime rt;
  return rt;
}

// Fallback: k-outer accumulation, vectorizes over the row of C.
template <typename T>
void gemm_fallback(bool ta, bool tb, int m, int n, int k, T alpha, const T* a,
                   int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    if (beta == T(0)) {
      std::memset(crow, 0, sizeof(T) * n);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int p = 0; p < k; ++p) {
      const T av = alpha * (ta ? a[static_cast<std::size_t>(p) * lda + i]
                               : a[static_cast<std::size_t>(i) * lda + p]);
      if (av == T(0)) continue;
      if (!tb) {
        const T* brow = b + static_cast<std::size_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j)
          crow[j] += av * b[static_cast<std::size_t>(j) * ldb + p];
      }
    }
  }
}

}  // namespace detail

inline bool blas_available() {
  return detail::blas().sgemm != nullptr && detail::blas().dgemm != nullptr;
}

/// Row-major C(m,n) = alpha * op(A) * op(B) + beta * C.
/// op(A) is (m,k), op(B) is (k,n); lda/ldb are the leading dimensions of the
/// stored (untransposed) arrays.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  if (m == 0 || n == 0) return;
  if (auto fn = detail::blas().sgemm) {
    fn(detail::kRowMajor, ta ? detail::kTrans : detail::kNoTrans,
       tb ? detail::kTrans : detail::kNoTrans, m, n, k, alpha, a, lda, b, ldb,
       beta, c, ldc);
    return;
  }
  detail::gemm_fallback(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
  if (m == 0 || n == 0) return;
  if (auto fn = detail::blas().dgemm) {
    fn(detail::kRowMajor, ta ? detail::kTrans : detail::kNoTrans,
       tb ? detail::kTrans : detail::kNoTrans, m, n, k, alpha, a, lda, b, ldb,
       beta, c, ldc);
    return;
  }
  detail::gemm_fallback(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace volt
