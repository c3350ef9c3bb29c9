#include "avgopt/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

namespace avgopt::kernels {

namespace {

struct State {
  Backend backend = Backend::scalar;
  const Ops* ops = &detail::scalar_ops;
};

State& state() {
  static State s = [] {
    State init;
    // best available first, then env override
    std::vector<Backend> avail = available_backends();
    init.backend = avail.back();
    init.ops = &backend_ops(init.backend);
    if (const char* env = std::getenv("AVGOPT_KERNEL")) {
      std::string want(env);
      for (Backend b : avail) {
        if (backend_name(b) == want) {
          init.backend = b;
          init.ops = &backend_ops(b);
        }
      }
    }
    return init;
  }();
  return s;
}

}  // namespace

std::vector<Backend> available_backends() {
  std::vector<Backend> v{Backend::scalar};
#ifdef AVGOPT_BUILD_AVX2
  if (detail::avx2_supported()) v.push_back(Backend::avx2);
#endif
#ifdef AVGOPT_BUILD_NEON
  v.push_back(Backend::neon);
#endif
  return v;
}

const Ops& backend_ops(Backend b) {
  switch (b) {
    case Backend::scalar:
      return detail::scalar_ops;
#ifdef AVGOPT_BUILD_AVX2
    case Backend::avx2:
      return detail::avx2_ops;
#endif
#ifdef AVGOPT_BUILD_NEON
    case Backend::neon:
      return detail::neon_ops;
#endif
    default:
      throw std::invalid_argument("kernel backend not compiled into this binary: " + backend_name(b));
  }
}

void force_backend(Backend b) {
  for (Backend avail : available_backends()) {
    if (avail == b) {
      state().backend = b;
      state().ops = &backend_ops(b);
      return;
    }
  }
  throw std::invalid_argument("kernel backend not available on this CPU: " + backend_name(b));
}

const Ops& active() { return *state().ops; }

Backend active_backend() { return state().backend; }

std::string backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

}  // namespace avgopt::kernels
