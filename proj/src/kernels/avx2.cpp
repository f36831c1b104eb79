// Compiled with -mavx2 -mfma; only reached after a cpuid check.
#include <immintrin.h>

#include "mtl/kernels.hpp"

namespace mtl::kernels {
namespace detail {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void accumulate_avx2(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += x[i];
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

// R rows of C, eight columns at a time, accumulated in registers over k.
template <std::size_t R>
void gemm_rows(std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc0[R], acc1[R];
    for (std::size_t r = 0; r < R; ++r) {
      acc0[r] = _mm256_setzero_pd();
      acc1[r] = _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
      for (std::size_t r = 0; r < R; ++r) {
        const __m256d av = _mm256_broadcast_sd(a + r * k + p);
        acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      double* cr = c + r * n + j;
      _mm256_storeu_pd(cr, _mm256_add_pd(_mm256_loadu_pd(cr), acc0[r]));
      _mm256_storeu_pd(cr + 4, _mm256_add_pd(_mm256_loadu_pd(cr + 4), acc1[r]));
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      for (std::size_t r = 0; r < R; ++r) acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * k + p), b0, acc[r]);
    }
    for (std::size_t r = 0; r < R; ++r) {
      double* cr = c + r * n + j;
      _mm256_storeu_pd(cr, _mm256_add_pd(_mm256_loadu_pd(cr), acc[r]));
    }
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[r * k + p] * b[p * n + j];
      c[r * n + j] += acc;
    }
  }
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<4>(n, k, a + i * k, b, c + i * n);
  for (; i < m; ++i) gemm_rows<1>(n, k, a + i * k, b, c + i * n);
}

// R rows of A against two rows of B: 2R independent dot products per pass.
template <std::size_t R>
void gemm_nt_rows(std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t j = 0;
  for (; j + 2 <= n; j += 2) {
    const double* b0 = b + j * k;
    const double* b1 = b0 + k;
    __m256d acc0[R], acc1[R];
    for (std::size_t r = 0; r < R; ++r) {
      acc0[r] = _mm256_setzero_pd();
      acc1[r] = _mm256_setzero_pd();
    }
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const __m256d v0 = _mm256_loadu_pd(b0 + p);
      const __m256d v1 = _mm256_loadu_pd(b1 + p);
      for (std::size_t r = 0; r < R; ++r) {
        const __m256d av = _mm256_loadu_pd(a + r * k + p);
        acc0[r] = _mm256_fmadd_pd(av, v0, acc0[r]);
        acc1[r] = _mm256_fmadd_pd(av, v1, acc1[r]);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      double s0 = hsum(acc0[r]);
      double s1 = hsum(acc1[r]);
      for (std::size_t q = p; q < k; ++q) {
        s0 += a[r * k + q] * b0[q];
        s1 += a[r * k + q] * b1[q];
      }
      c[r * n + j] += s0;
      c[r * n + j + 1] += s1;
    }
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) c[r * n + j] += dot_avx2(a + r * k, b + j * k, k);
  }
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_nt_rows<4>(n, k, a + i * k, b, c + i * n);
  for (; i < m; ++i) gemm_nt_rows<1>(n, k, a + i * k, b, c + i * n);
}

}  // namespace

const KernelTable& avx2_table_impl() {
  static const KernelTable table{Isa::avx2, &dot_avx2, &axpy_avx2, &accumulate_avx2,
                                 &sum_avx2, &gemm_avx2, &gemm_nt_avx2};
  return table;
}

}  // namespace detail
}  // namespace mtl::kernels
