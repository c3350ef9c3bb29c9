#include "avgopt/kernels.hpp"

#include <cmath>
#include <cstring>

namespace avgopt::kernels::detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal_scalar(double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double max_abs_scalar(const double* x, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

double max_abs_diff_scalar(const double* a, const double* b, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void matvec_scalar(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) y[i] = dot_scalar(a + i * cols, x, cols);
}

void vecmat_scalar(const double* x, const double* a, std::size_t rows, std::size_t cols, double* y) {
  std::memset(y, 0, cols * sizeof(double));
  for (std::size_t i = 0; i < rows; ++i) axpy_scalar(x[i], a + i * cols, y, cols);
}

}  // namespace

const Ops scalar_ops = {dot_scalar,     axpy_scalar,          scal_scalar,   sum_scalar,
                        max_abs_scalar, max_abs_diff_scalar,  matvec_scalar, vecmat_scalar};

}  // namespace avgopt::kernels::detail
