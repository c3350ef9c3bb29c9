#pragma once

#include <utility>
#include <vector>

#include "avgopt/hierarchy.hpp"
#include "avgopt/linalg.hpp"
#include "avgopt/mdp.hpp"

namespace avgopt {

/// Transition matrix of the augmented chain over (state, option stack):
/// primitive actions are marginalized out, the environment moves, and the
/// termination cascade retains or re-selects options at the next state.
struct AugmentedKernel {
  int n_states = 0;
  int n_stacks = 0;
  DenseMatrix p;  // square, indexed by state * n_stacks + stack

  int size() const { return n_states * n_stacks; }
  int index(int state, int stack) const { return state * n_stacks + stack; }
};

AugmentedKernel one_step_kernel(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec);

/// k-step transition probabilities by composing one step with k-1 steps.
AugmentedKernel k_step_kernel(const AugmentedKernel& kernel, int k);

/// Environment transition with primitive actions marginalized under the
/// bottom-level policy: rows indexed by (state, stack), columns by next state.
DenseMatrix marginal_env_transition(const TabularMdp& mdp, const ActorParams& params,
                                    const HierarchySpec& spec);

struct StationaryDistribution {
  std::vector<double> d;  // over augmented states, sums to 1

  double at(const AugmentedKernel& kernel, int state, int stack) const {
    return d[kernel.index(state, stack)];
  }
  /// Joint steady-state weighting over (state, stack, next state):
  /// d(s, o) times the option-marginal environment transition.
  std::vector<double> joint_with_next_state(const AugmentedKernel& kernel) const;
};

/// Unique fixed point of the kernel; throws NotUnichainError when the fixed
/// point is not unique.
StationaryDistribution stationary_distribution(const AugmentedKernel& kernel);

/// Differential (bias) values of the average-reward criterion, anchored so
/// the stationary-weighted mean of the full-stack option value is zero.
struct ValueTables {
  double gain = 0.0;  // expected reward per step in steady state
  /// option_value[level][state * prefix_count(level) + prefix] for prefix
  /// levels 0..depth-1; level depth-1 is the full-stack table.
  std::vector<std::vector<double>> option_value;
  /// Value of a primitive action under the full active stack, with the
  /// per-step gain subtracted in place of discounting:
  /// action_value[(state * n_stacks + stack) * n_actions + action].
  std::vector<double> action_value;
  /// Value upon arrival at a state with the full incoming stack,
  /// marginalizing which levels terminate: arrival_value[state * K + stack].
  std::vector<double> arrival_value;
};

/// Advantage of keeping an option prefix over terminating into the
/// higher-level value, for levels 1..depth-1:
/// value[level-1][state * prefix_count(level) + prefix].
struct AdvantageTables {
  std::vector<std::vector<double>> value;
};

std::pair<ValueTables, AdvantageTables> solve_values(const TabularMdp& mdp, const ActorParams& params,
                                                     const HierarchySpec& spec);

/// Expected reward per step in steady state, without the value solve.
double exact_gain(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec);

/// Flat stochastic policy over a tabular MDP.
struct FlatPolicy {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;  // [state * n_actions + action]

  std::span<const double> row(int s) const {
    return {probs.data() + static_cast<std::size_t>(s) * n_actions, static_cast<std::size_t>(n_actions)};
  }
  void validate() const;
};

FlatPolicy uniform_flat_policy(const TabularMdp& mdp);
/// Deterministic policy taking `action` everywhere.
FlatPolicy committed_flat_policy(const TabularMdp& mdp, int action);

/// Exact discounted state values: solves v = r + gamma P v for the flat
/// policy. gamma must lie in (0,1).
std::vector<double> discounted_values(const TabularMdp& mdp, const FlatPolicy& policy, double gamma);

}  // namespace avgopt
