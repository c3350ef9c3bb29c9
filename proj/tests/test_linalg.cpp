#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avgopt/kernels.hpp"
#include "avgopt/linalg.hpp"
#include "avgopt/rng.hpp"

using namespace avgopt;

namespace {

DenseMatrix random_stochastic(Rng& rng, int n) {
  DenseMatrix p(n, n);
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      p.at(i, j) = -std::log(1.0 - rng.uniform());
      total += p.at(i, j);
    }
    for (int j = 0; j < n; ++j) p.at(i, j) /= total;
  }
  return p;
}

DenseMatrix cycle_permutation(int n) {
  DenseMatrix p(n, n);
  for (int i = 0; i < n; ++i) p.at(i, (i + 1) % n) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("lu solve recovers random diagonally dominant systems") {
  Rng rng(3);
  for (int n : {1, 2, 5, 12, 40}) {
    DenseMatrix a(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a.at(i, j) = rng.uniform(-1.0, 1.0);
      a.at(i, i) += n;
    }
    std::vector<double> x_true(n);
    for (double& v : x_true) v = rng.uniform(-2.0, 2.0);
    std::vector<double> b(n);
    kernels::matvec(a.data.data(), n, n, x_true.data(), b.data());
    const std::vector<double> x = solve_linear(a, b);
    CHECK(kernels::max_abs_diff(x, x_true) < 1e-10);
  }
}

TEST_CASE("singular systems are reported") {
  DenseMatrix a(2, 2);
  a.at(0, 0) = 1.0;
  a.at(0, 1) = 2.0;
  a.at(1, 0) = 2.0;
  a.at(1, 1) = 4.0;
  std::vector<double> b{1.0, 2.0};
  CHECK_THROWS_AS(solve_linear(a, b), std::runtime_error);
}

TEST_CASE("matmul agrees with a naive triple loop") {
  Rng rng(5);
  DenseMatrix a(4, 6);
  DenseMatrix b(6, 3);
  for (double& v : a.data) v = rng.uniform(-1.0, 1.0);
  for (double& v : b.data) v = rng.uniform(-1.0, 1.0);
  const DenseMatrix c = matmul(a, b);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 6; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("rank estimation") {
  CHECK(rank_estimate(identity_matrix(5)) == 5);
  DenseMatrix shifted = cycle_permutation(4);
  for (int i = 0; i < 4; ++i) shifted.at(i, i) -= 1.0;
  CHECK(rank_estimate(shifted) == 3);
}

TEST_CASE("stationary vector of simple chains") {
  DenseMatrix symmetric(2, 2);
  symmetric.at(0, 0) = 0.5;
  symmetric.at(0, 1) = 0.5;
  symmetric.at(1, 0) = 0.5;
  symmetric.at(1, 1) = 0.5;
  const std::vector<double> d2 = stationary_vector(symmetric);
  CHECK(d2[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d2[1] == doctest::Approx(0.5).epsilon(1e-12));

  // periodic chain still has a unique stationary vector
  const std::vector<double> d4 = stationary_vector(cycle_permutation(4));
  for (double v : d4) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("stationary vector of a random 12-state chain") {
  Rng rng(9);
  const DenseMatrix p = random_stochastic(rng, 12);
  const std::vector<double> d = stationary_vector(p);
  std::vector<double> dp(12);
  kernels::vecmat(d.data(), p.data.data(), 12, 12, dp.data());
  CHECK(kernels::max_abs_diff(dp, d) < 1e-10);
  CHECK(kernels::sum(d) == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : d) CHECK(v >= 0.0);

  // cross-check against the damped power iteration
  const std::vector<double> d_power = stationary_power_iteration(p, 1e-14);
  CHECK(kernels::max_abs_diff(d, d_power) < 1e-10);
}

TEST_CASE("two closed classes are refused") {
  DenseMatrix p(4, 4);
  p.at(0, 1) = 1.0;
  p.at(1, 0) = 1.0;
  p.at(2, 3) = 1.0;
  p.at(3, 2) = 1.0;
  CHECK_THROWS_AS(stationary_vector(p), NotUnichainError);
}

TEST_CASE("transient states are fine") {
  // state 0 feeds the closed pair {1,2}
  DenseMatrix p(3, 3);
  p.at(0, 1) = 0.7;
  p.at(0, 2) = 0.3;
  p.at(1, 2) = 1.0;
  p.at(2, 1) = 1.0;
  const std::vector<double> d = stationary_vector(p);
  CHECK(d[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d[2] == doctest::Approx(0.5).epsilon(1e-12));
}
