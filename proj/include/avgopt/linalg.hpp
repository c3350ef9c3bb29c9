#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace avgopt {

/// Dense row-major matrix of doubles.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::span<double> row_span(int r) { return {row(r), static_cast<std::size_t>(cols)}; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols)}; }
};

DenseMatrix identity_matrix(int n);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

/// LU factorization with partial pivoting, stored in place.
struct LuFactorization {
  DenseMatrix lu;
  std::vector<int> perm;
  double min_abs_pivot = 0.0;
  double max_abs_pivot = 0.0;
  bool singular = false;
};

LuFactorization lu_factor(DenseMatrix a);
std::vector<double> lu_solve(const LuFactorization& f, std::span<const double> b);
/// Solves a x = b by LU with partial pivoting; throws std::runtime_error on a singular system.
std::vector<double> solve_linear(const DenseMatrix& a, std::span<const double> b);

/// Number of pivots of |value| > rel_tol * max(max pivot, scale_floor) in a
/// partial-pivot elimination. Pass the natural scale of the matrix as
/// scale_floor when entries may legitimately be all near zero.
int rank_estimate(DenseMatrix a, double rel_tol = 1e-8, double scale_floor = 0.0);

struct NotUnichainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stationary row vector d of a row-stochastic matrix: d P = d, sum(d) = 1.
/// Verifies that the fixed point is unique (rank of P - I must be n-1) and
/// throws NotUnichainError otherwise.
std::vector<double> stationary_vector(const DenseMatrix& p, double residual_tol = 1e-10);

/// Damped power iteration d <- d (P + I)/2 until the residual drops below tol.
/// Used as an independent cross-check of stationary_vector.
std::vector<double> stationary_power_iteration(const DenseMatrix& p, double tol = 1e-12,
                                               long long max_iters = 1000000);

}  // namespace avgopt
