#include "avgopt/kernels.hpp"

#ifdef AVGOPT_BUILD_NEON

#include <arm_neon.h>

#include <cmath>
#include <cstring>

namespace avgopt::kernels::detail {

namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(acc0) + vaddvq_f64(acc1);
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scal_neon(double* x, double a, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(va, vld1q_f64(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

double sum_neon(const double* x, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double max_abs_neon(const double* x, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vmaxq_f64(acc, vabsq_f64(vld1q_f64(x + i)));
  double m = vmaxvq_f64(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

double max_abs_diff_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    acc = vmaxq_f64(acc, vabsq_f64(vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i))));
  }
  double m = vmaxvq_f64(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void matvec_neon(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) y[i] = dot_neon(a + i * cols, x, cols);
}

void vecmat_neon(const double* x, const double* a, std::size_t rows, std::size_t cols, double* y) {
  std::memset(y, 0, cols * sizeof(double));
  for (std::size_t i = 0; i < rows; ++i) axpy_neon(x[i], a + i * cols, y, cols);
}

}  // namespace

const Ops neon_ops = {dot_neon,     axpy_neon,          scal_neon,   sum_neon,
                      max_abs_neon, max_abs_diff_neon,  matvec_neon, vecmat_neon};

}  // namespace avgopt::kernels::detail

#endif  // AVGOPT_BUILD_NEON
