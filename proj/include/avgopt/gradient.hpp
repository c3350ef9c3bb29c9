#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avgopt/exact_eval.hpp"
#include "avgopt/hierarchy.hpp"
#include "avgopt/mdp.hpp"

namespace avgopt {

/// Gradient of the steady-state reward per step with respect to the full
/// actor parameter vector.
struct GradientVector {
  std::vector<double> values;
};

/// Which of the three gradient summands to include; used by the block
/// consistency tests.
struct GradientTerms {
  bool action_term = true;       // bottom-level policy scores
  bool option_term = true;       // intermediate policy scores
  bool termination_term = true;  // termination scores
};

/// Exact gain gradient, assembled from the steady-state weighting of the
/// augmented chain, the primitive action values, the prefix option values
/// with the exact arrival distribution of retained/re-selected prefixes,
/// and the termination advantages.
GradientVector gain_gradient(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec,
                             const GradientTerms& terms = {});

/// Central finite differences of the exact gain, one anchored evaluation
/// pair per parameter coordinate.
GradientVector finite_difference_gradient(const TabularMdp& mdp, const ActorParams& params,
                                          const HierarchySpec& spec, double step = 1e-5);

struct GradcheckInstance {
  int index = 0;
  int depth = 0;
  int n_states = 0;
  std::vector<int> options_per_level;
  int n_actions = 0;
  double max_rel_error = 0.0;
  double median_rel_error = 0.0;
  /// Max relative error restricted to each parameter block ("pi1", "beta1", ...).
  std::vector<std::pair<std::string, double>> block_errors;
  bool pass = false;
};

struct GradcheckReport {
  int instances = 0;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::vector<GradcheckInstance> results;
  double max_rel_error = 0.0;
  bool pass = true;
};

/// Compares the assembled gradient against central finite differences on
/// randomly generated unichain instances (depth 2 or 3, up to 6 states,
/// 3 options per level, 3 actions, weights uniform in [-1, 1]).
/// Relative error uses max(|gradient|_inf, 1e-8) as the denominator.
GradcheckReport run_gradcheck(int instances, std::uint64_t seed, double step = 1e-5,
                              double tolerance = 1e-4);

std::string gradcheck_to_json(const GradcheckReport& report);
std::string gradcheck_table(const GradcheckReport& report);

}  // namespace avgopt
