#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

// Dense double-precision primitives with runtime backend selection.
// The scalar implementation is the reference; AVX2 (x86-64) and NEON
// (aarch64) variants are picked at startup when the CPU supports them.
// The environment variable AVGOPT_KERNEL=scalar|avx2|neon forces a
// backend, which the equivalence tests use to compare results.

namespace avgopt::kernels {

enum class Backend { scalar, avx2, neon };

struct Ops {
  double (*dot)(const double*, const double*, std::size_t);
  // y += a * x
  void (*axpy)(double, const double*, double*, std::size_t);
  // x *= a
  void (*scal)(double*, double, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*max_abs)(const double*, std::size_t);
  double (*max_abs_diff)(const double*, const double*, std::size_t);
  // y = A x, A row-major rows x cols
  void (*matvec)(const double*, std::size_t, std::size_t, const double*, double*);
  // y = x^T A, A row-major rows x cols
  void (*vecmat)(const double*, const double*, std::size_t, std::size_t, double*);
};

const Ops& active();
Backend active_backend();
std::vector<Backend> available_backends();
const Ops& backend_ops(Backend b);
// Throws std::invalid_argument when the backend is not available on this CPU.
void force_backend(Backend b);
std::string backend_name(Backend b);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void scal(std::span<double> x, double a) { active().scal(x.data(), a, x.size()); }
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }
inline double max_abs(std::span<const double> x) { return active().max_abs(x.data(), x.size()); }
inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  return active().max_abs_diff(a.data(), b.data(), a.size());
}
inline void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  active().matvec(a, rows, cols, x, y);
}
inline void vecmat(const double* x, const double* a, std::size_t rows, std::size_t cols, double* y) {
  active().vecmat(x, a, rows, cols, y);
}

namespace detail {
extern const Ops scalar_ops;
#ifdef AVGOPT_BUILD_AVX2
extern const Ops avx2_ops;
bool avx2_supported();
#endif
#ifdef AVGOPT_BUILD_NEON
extern const Ops neon_ops;
#endif
}  // namespace detail

}  // namespace avgopt::kernels
