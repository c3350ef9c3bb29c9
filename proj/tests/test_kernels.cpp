#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "avgopt/kernels.hpp"
#include "avgopt/rng.hpp"

using namespace avgopt;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// sizes that exercise the SIMD main loops and every tail length
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 33, 100, 1023};

}  // namespace

TEST_CASE("scalar dot matches long double accumulation") {
  Rng rng(11);
  for (std::size_t n : kSizes) {
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    long double acc = 0.0L;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<long double>(a[i]) * b[i];
    const double got = kernels::detail::scalar_ops.dot(a.data(), b.data(), n);
    CHECK(std::fabs(got - static_cast<double>(acc)) <= 1e-12 * (1.0 + std::fabs(static_cast<double>(acc))));
  }
}

TEST_CASE("every available backend agrees with the scalar reference") {
  Rng rng(42);
  const auto& scalar = kernels::detail::scalar_ops;
  for (kernels::Backend backend : kernels::available_backends()) {
    const auto& ops = kernels::backend_ops(backend);
    for (std::size_t n : kSizes) {
      const auto a = random_vec(rng, n, -3.0, 3.0);
      const auto b = random_vec(rng, n, -3.0, 3.0);
      double mag = 0.0;
      for (std::size_t i = 0; i < n; ++i) mag += std::fabs(a[i] * b[i]);

      CHECK(std::fabs(ops.dot(a.data(), b.data(), n) - scalar.dot(a.data(), b.data(), n)) <=
            1e-13 * (1.0 + mag));
      CHECK(std::fabs(ops.sum(a.data(), n) - scalar.sum(a.data(), n)) <= 1e-13 * (1.0 + mag));
      CHECK(ops.max_abs(a.data(), n) == scalar.max_abs(a.data(), n));
      CHECK(ops.max_abs_diff(a.data(), b.data(), n) == scalar.max_abs_diff(a.data(), b.data(), n));

      std::vector<double> y1 = b;
      std::vector<double> y2 = b;
      ops.axpy(0.73, a.data(), y1.data(), n);
      scalar.axpy(0.73, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

      std::vector<double> x1 = a;
      std::vector<double> x2 = a;
      ops.scal(x1.data(), -1.37, n);
      scalar.scal(x2.data(), -1.37, n);
      for (std::size_t i = 0; i < n; ++i) CHECK(x1[i] == x2[i]);
    }

    // rectangular products
    for (std::size_t rows : {1u, 3u, 8u, 17u}) {
      for (std::size_t cols : {1u, 5u, 16u, 33u}) {
        const auto m = random_vec(rng, rows * cols);
        const auto x = random_vec(rng, cols);
        const auto xt = random_vec(rng, rows);
        std::vector<double> y1(rows), y2(rows), z1(cols), z2(cols);
        ops.matvec(m.data(), rows, cols, x.data(), y1.data());
        scalar.matvec(m.data(), rows, cols, x.data(), y2.data());
        ops.vecmat(xt.data(), m.data(), rows, cols, z1.data());
        scalar.vecmat(xt.data(), m.data(), rows, cols, z2.data());
        for (std::size_t i = 0; i < rows; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-13));
        for (std::size_t j = 0; j < cols; ++j) CHECK(z1[j] == doctest::Approx(z2[j]).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("forcing a backend switches the active ops") {
  const kernels::Backend original = kernels::active_backend();
  kernels::force_backend(kernels::Backend::scalar);
  CHECK(kernels::active_backend() == kernels::Backend::scalar);
  const std::vector<double> a{1.0, 2.0, 3.0};
  CHECK(kernels::dot(a, a) == doctest::Approx(14.0));
  kernels::force_backend(original);
  CHECK(kernels::active_backend() == original);
}

TEST_CASE("unavailable backend is rejected") {
  bool neon_available = false;
  for (kernels::Backend b : kernels::available_backends()) {
    if (b == kernels::Backend::neon) neon_available = true;
  }
  if (!neon_available) {
    CHECK_THROWS_AS(kernels::force_backend(kernels::Backend::neon), std::invalid_argument);
  }
}
