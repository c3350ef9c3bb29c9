#pragma once

#include <string>
#include <vector>

#include "avgopt/linalg.hpp"
#include "avgopt/rng.hpp"

namespace avgopt {

/// Shape of a depth-N option hierarchy over a tabular state space.
///
/// Level 0 is the single root option that never terminates, levels
/// 1..depth-1 carry the configured option counts, and level depth is the
/// primitive-action level which always terminates. With depth == 1 the
/// hierarchy degenerates to a flat state-conditioned policy.
struct HierarchySpec {
  int depth = 1;
  std::vector<int> options_per_level;  // one entry per level 1..depth-1
  int n_actions = 1;
  int n_states = 1;

  void validate() const;

  /// Number of options at level 1..depth-1.
  int options_at(int level) const { return options_per_level[level - 1]; }
  /// Number of choices offered by the level's policy (actions at the bottom).
  int choices_at(int level) const { return level == depth ? n_actions : options_at(level); }
  /// Number of distinct option prefixes through the given level (level 0 -> 1).
  int prefix_count(int level) const;
  /// Number of full option stacks (levels 1..depth-1).
  int stack_count() const { return prefix_count(depth - 1); }
  /// Contexts seen by the level's policy: (state, prefix through level-1).
  int policy_contexts(int level) const { return n_states * prefix_count(level - 1); }
  /// Contexts seen by the level's termination: (state, prefix through level).
  int termination_contexts(int level) const { return n_states * prefix_count(level); }
};

/// Active options, one per level 0..depth-1; ids[0] is always 0.
struct OptionStack {
  std::vector<int> ids;

  static OptionStack root(const HierarchySpec& spec) {
    return OptionStack{std::vector<int>(static_cast<std::size_t>(spec.depth), 0)};
  }
  bool operator==(const OptionStack&) const = default;
};

/// Mixed-radix id of the options through `level`; the id of a prefix is the
/// stack id reduced modulo prefix_count(level).
int prefix_id(const HierarchySpec& spec, const OptionStack& stack, int level);
int stack_id(const HierarchySpec& spec, const OptionStack& stack);
OptionStack stack_from_id(const HierarchySpec& spec, int id);

/// Flat actor parameter vector: softmax scores for every policy level and
/// logistic scores for every termination level, clamped to [-bound, bound].
///
/// Layout: policy blocks for levels 1..depth, then termination blocks for
/// levels 1..depth-1; within a block, contexts are state-major.
struct ActorParams {
  std::vector<double> theta;
  double bound = 50.0;
};

ActorParams make_zero_params(const HierarchySpec& spec, double bound = 50.0);
int param_count(const HierarchySpec& spec);
int policy_param_index(const HierarchySpec& spec, int level, int state, int prefix, int choice);
int termination_param_index(const HierarchySpec& spec, int level, int state, int prefix);
/// Human-readable name of a parameter coordinate, e.g. "pi2[s3|o1][a1]".
std::string param_name(const HierarchySpec& spec, int index);
/// Block label of a coordinate: "pi<level>" or "beta<level>".
std::string param_block(const HierarchySpec& spec, int index);

/// Softmax choice distribution of the level's policy at (state, prefix of
/// `context`). Strictly positive, sums to 1 within 1e-12.
std::vector<double> policy_probs(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                                 const OptionStack& context);

/// Termination probability at (state, prefix of `context`): exactly 0 at
/// level 0, exactly 1 at the primitive level, a logistic score otherwise.
double termination_prob(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                        const OptionStack& context);

struct ArrivalSample {
  /// Highest level whose option survived; every deeper level re-selected.
  int kept_level = 0;
  OptionStack stack;
};

/// Samples the termination cascade on arriving at `state` with `incoming`
/// options active: terminations are drawn from the innermost level outward,
/// stop at the first level that continues, and deeper levels re-select
/// top-down. The root never terminates and the primitive level always does.
ArrivalSample sample_arrival(const ActorParams& params, const HierarchySpec& spec, int state,
                             const OptionStack& incoming, Rng& rng);

/// Exact distribution of the option prefix through level-1 on arrival at
/// `state`, conditioned on levels level..depth-1 having terminated. Entry
/// [q] is the probability that the retained/re-selected prefix has id q.
/// With level == depth this is the unconditional option-transition row.
std::vector<double> prefix_arrival_distribution(const ActorParams& params, const HierarchySpec& spec,
                                                int state, const OptionStack& incoming, int level);

/// Gradients of log-probabilities in full parameter dimension, zero outside
/// the block of the scored context.
struct LogGradFeatures {
  std::vector<double> action;                           // log pi^depth(a | s, stack)
  std::vector<std::vector<double>> option;              // level 1..depth-1: log pi^l(stack_l | s', prefix)
  std::vector<std::vector<double>> termination;         // level 1..depth-1: log beta^l(s', prefix)
};

LogGradFeatures log_grad(const ActorParams& params, const HierarchySpec& spec, int state,
                         const OptionStack& stack, int action, int next_state);

/// Sparse building blocks used by the online learner: the log gradient of a
/// softmax choice touches one context block, the log gradient of a logistic
/// termination touches one coordinate.
void add_policy_log_grad(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                         const OptionStack& context, int choice, double scale, std::vector<double>& out);
void add_termination_log_grad(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                              const OptionStack& context, double scale, std::vector<double>& out);

/// Linear features for the per-level option-value critics. Tabular mode is
/// the orthonormal one-hot basis over (state, prefix) contexts; linear mode
/// takes one user-supplied feature matrix per prefix level 0..depth-1.
struct FeatureMap {
  enum class Mode { tabular, linear };
  Mode mode = Mode::tabular;
  std::vector<DenseMatrix> features;  // linear mode: [contexts x dim] per level

  void validate(const HierarchySpec& spec) const;
  int dimension(const HierarchySpec& spec, int level) const;
  double value(const HierarchySpec& spec, int level, int context, std::span<const double> weights) const;
  void accumulate(const HierarchySpec& spec, int level, int context, double scale,
                  std::span<double> weights) const;
};

std::string params_to_json(const ActorParams& params, const HierarchySpec& spec);
ActorParams params_from_json(const HierarchySpec& spec, const std::string& text);

}  // namespace avgopt
