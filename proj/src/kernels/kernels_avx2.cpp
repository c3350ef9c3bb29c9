#include "avgopt/kernels.hpp"

#ifdef AVGOPT_BUILD_AVX2

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace avgopt::kernels::detail {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_max_sd(lo, shuf));
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

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scal_avx2(double* x, double a, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

const __m256d kAbsMask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));

double max_abs_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_max_pd(acc, _mm256_and_pd(kAbsMask, _mm256_loadu_pd(x + i)));
  }
  double m = hmax(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

double max_abs_diff_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_max_pd(acc, _mm256_and_pd(kAbsMask, d));
  }
  double m = hmax(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void matvec_avx2(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) y[i] = dot_avx2(a + i * cols, x, cols);
}

void vecmat_avx2(const double* x, const double* a, std::size_t rows, std::size_t cols, double* y) {
  std::memset(y, 0, cols * sizeof(double));
  for (std::size_t i = 0; i < rows; ++i) axpy_avx2(x[i], a + i * cols, y, cols);
}

}  // namespace

bool avx2_supported() {
#if defined(__GNUC__) || defined(__clang__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return true;  // MSVC builds gate on /arch:AVX2 at compile time
#endif
}

const Ops avx2_ops = {dot_avx2,     axpy_avx2,          scal_avx2,   sum_avx2,
                      max_abs_avx2, max_abs_diff_avx2,  matvec_avx2, vecmat_avx2};

}  // namespace avgopt::kernels::detail

#endif  // AVGOPT_BUILD_AVX2
