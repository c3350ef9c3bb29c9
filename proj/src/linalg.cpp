#include "avgopt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "avgopt/kernels.hpp"

namespace avgopt {

DenseMatrix identity_matrix(int n) {
  DenseMatrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: dimension mismatch");
  DenseMatrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      kernels::axpy(a.at(i, k), b.row_span(k), c.row_span(i));
    }
  }
  return c;
}

LuFactorization lu_factor(DenseMatrix a) {
  if (a.rows != a.cols) throw std::invalid_argument("lu_factor: matrix must be square");
  const int n = a.rows;
  LuFactorization f;
  f.perm.resize(n);
  for (int i = 0; i < n; ++i) f.perm[i] = i;
  f.min_abs_pivot = std::numeric_limits<double>::infinity();

  for (int k = 0; k < n; ++k) {
    int pivot = k;
    double best = std::fabs(a.at(k, k));
    for (int i = k + 1; i < n; ++i) {
      double v = std::fabs(a.at(i, k));
      if (v > best) {
        best = v;
        pivot = i;
      }
    }
    if (pivot != k) {
      for (int j = 0; j < n; ++j) std::swap(a.at(k, j), a.at(pivot, j));
      std::swap(f.perm[k], f.perm[pivot]);
    }
    const double p = a.at(k, k);
    f.min_abs_pivot = std::min(f.min_abs_pivot, std::fabs(p));
    f.max_abs_pivot = std::max(f.max_abs_pivot, std::fabs(p));
    if (p == 0.0) {
      f.singular = true;
      continue;
    }
    const std::size_t tail = static_cast<std::size_t>(n - k - 1);
    for (int i = k + 1; i < n; ++i) {
      const double factor = a.at(i, k) / p;
      a.at(i, k) = factor;
      if (tail > 0) {
        kernels::axpy(-factor, {a.row(k) + k + 1, tail}, {a.row(i) + k + 1, tail});
      }
    }
  }
  if (n == 0) f.min_abs_pivot = 0.0;
  f.lu = std::move(a);
  return f;
}

std::vector<double> lu_solve(const LuFactorization& f, std::span<const double> b) {
  const int n = f.lu.rows;
  if (static_cast<int>(b.size()) != n) throw std::invalid_argument("lu_solve: rhs size mismatch");
  if (f.singular) throw std::runtime_error("lu_solve: singular matrix");
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = b[f.perm[i]];
  // forward: L y = Pb
  for (int i = 1; i < n; ++i) {
    x[i] -= kernels::active().dot(f.lu.row(i), x.data(), static_cast<std::size_t>(i));
  }
  // backward: U x = y
  for (int i = n - 1; i >= 0; --i) {
    const std::size_t tail = static_cast<std::size_t>(n - i - 1);
    if (tail > 0) {
      x[i] -= kernels::active().dot(f.lu.row(i) + i + 1, x.data() + i + 1, tail);
    }
    x[i] /= f.lu.at(i, i);
  }
  return x;
}

std::vector<double> solve_linear(const DenseMatrix& a, std::span<const double> b) {
  return lu_solve(lu_factor(a), b);
}

int rank_estimate(DenseMatrix a, double rel_tol, double scale_floor) {
  const int n = std::min(a.rows, a.cols);
  if (a.rows != a.cols) throw std::invalid_argument("rank_estimate: square matrices only");
  LuFactorization f = lu_factor(std::move(a));
  const double scale = std::max(f.max_abs_pivot, scale_floor);
  if (scale == 0.0) return 0;
  int rank = 0;
  for (int i = 0; i < n; ++i) {
    if (std::fabs(f.lu.at(i, i)) > rel_tol * scale) ++rank;
  }
  return rank;
}

std::vector<double> stationary_vector(const DenseMatrix& p, double residual_tol) {
  if (p.rows != p.cols) throw std::invalid_argument("stationary_vector: square matrices only");
  const int n = p.rows;
  if (n == 0) throw std::invalid_argument("stationary_vector: empty matrix");

  // Uniqueness of the fixed point: P - I must have a one-dimensional null space.
  DenseMatrix shifted(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) shifted.at(i, j) = p.at(i, j) - (i == j ? 1.0 : 0.0);
  }
  // Row-stochastic matrices make the natural scale of P - I order one.
  const int rank = rank_estimate(std::move(shifted), 1e-9, 1.0);
  if (rank != n - 1) {
    throw NotUnichainError("chain is not unichain: fixed point of the transition matrix is not unique (rank " +
                           std::to_string(rank) + " of " + std::to_string(n) + "x" + std::to_string(n) +
                           " shifted matrix, expected " + std::to_string(n - 1) + ")");
  }

  // Solve (P^T - I) d = 0 with the normalization row sum(d) = 1.
  DenseMatrix m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m.at(i, j) = p.at(j, i) - (i == j ? 1.0 : 0.0);
  }
  for (int j = 0; j < n; ++j) m.at(n - 1, j) = 1.0;
  std::vector<double> rhs(n, 0.0);
  rhs[n - 1] = 1.0;
  std::vector<double> d = solve_linear(m, rhs);

  for (double& v : d) {
    if (v < 0.0 && v > -1e-9) v = 0.0;
  }
  double total = kernels::sum(d);
  kernels::scal(d, 1.0 / total);

  std::vector<double> dp(n);
  kernels::vecmat(d.data(), p.data.data(), n, n, dp.data());
  const double residual = kernels::max_abs_diff(dp, d);
  if (residual > residual_tol) {
    throw std::runtime_error("stationary_vector: fixed-point residual " + std::to_string(residual) +
                             " exceeds tolerance");
  }
  return d;
}

std::vector<double> stationary_power_iteration(const DenseMatrix& p, double tol, long long max_iters) {
  const int n = p.rows;
  std::vector<double> d(n, 1.0 / n);
  std::vector<double> next(n);
  for (long long it = 0; it < max_iters; ++it) {
    kernels::vecmat(d.data(), p.data.data(), n, n, next.data());
    // damping handles periodic chains
    for (int i = 0; i < n; ++i) next[i] = 0.5 * (next[i] + d[i]);
    const double total = kernels::sum(next);
    kernels::scal(next, 1.0 / total);
    const double delta = kernels::max_abs_diff(next, d);
    d.swap(next);
    if (delta < tol) return d;
  }
  throw std::runtime_error("stationary_power_iteration: did not converge");
}

}  // namespace avgopt
