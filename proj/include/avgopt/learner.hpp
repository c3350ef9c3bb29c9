#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avgopt/exact_eval.hpp"
#include "avgopt/hierarchy.hpp"
#include "avgopt/mdp.hpp"

namespace avgopt {

enum class RewardMode { average_reward, discounted };

/// Coupled step-size schedules: the critic (and the gain estimate) run on
/// the fast timescale, the actor on the slow one. Divergent sums, square
/// summability and actor/critic rate ratio going to zero are enforced by
/// 0.5 < critic_decay < actor_decay <= 1.
///
/// The optional caps clip each rate from above, turning the power law into
/// a constant burn-in followed by the same decay; every summability and
/// ratio condition is preserved. Sparse-reward tabular runs need the
/// burn-in for the value wave to cover the state space within a desk-scale
/// step budget.
struct StepSchedule {
  double actor_scale = 0.01;
  double critic_scale = 0.05;
  double gain_scale = 0.05;
  double actor_decay = 0.9;
  double critic_decay = 0.6;
  double actor_cap = 1e30;
  double critic_cap = 1e30;
  double gain_cap = 1e30;

  void validate() const;
  double actor_rate(long long t) const;
  double critic_rate(long long t) const;
  double gain_rate(long long t) const;
};

/// Linear weights for each prefix level's option-value estimate plus the
/// scalar average-reward estimate. In tabular mode the weights are the
/// table entries themselves.
struct CriticState {
  std::vector<std::vector<double>> weights;  // per prefix level 0..depth-1
  double gain_estimate = 0.0;

  bool operator==(const CriticState&) const = default;
};

CriticState make_zero_critic(const HierarchySpec& spec, const FeatureMap& features);

/// Critic estimate of the option value at a prefix level.
double option_value_estimate(const CriticState& critic, const HierarchySpec& spec,
                             const FeatureMap& features, int level, int state, int prefix);

/// Critic estimate of the value upon arrival with the incoming stack,
/// composed from the per-level estimates and the current terminations.
double arrival_value_estimate(const CriticState& critic, const ActorParams& params,
                              const HierarchySpec& spec, const FeatureMap& features, int state,
                              const OptionStack& incoming);

/// Critic estimate of the advantage of keeping the prefix at `level`.
double advantage_estimate(const CriticState& critic, const ActorParams& params, const HierarchySpec& spec,
                          const FeatureMap& features, int level, int state, const OptionStack& context);

/// Temporal-difference error of one step. In average-reward mode
/// delta = r - gain_estimate + U(next) - Q(current); in discounted mode
/// delta = r + gamma U(next) - Q(current).
double td_error(const Transition& step, const OptionStack& stack_before, const CriticState& critic,
                const ActorParams& params, const HierarchySpec& spec, const FeatureMap& features,
                RewardMode mode, double gamma);

/// Fast-timescale update: moves the gain estimate toward the sampled reward
/// (average-reward mode) and every prefix level's weights along delta.
void critic_step(CriticState& critic, const Transition& step, const OptionStack& stack_before,
                 const ActorParams& params, const HierarchySpec& spec, const FeatureMap& features,
                 const StepSchedule& schedule, long long t, RewardMode mode, double gamma);

/// Update direction for the actor: the sampled action value scales the
/// bottom policy's log gradient, re-selected options scale their level's
/// log gradient through the termination products, and termination scores
/// move against the advantage of the abandoned prefix.
struct SparseUpdate {
  std::vector<std::pair<int, double>> entries;
};

SparseUpdate update_direction_sparse(const ActorParams& params, const CriticState& critic,
                                     const HierarchySpec& spec, const FeatureMap& features,
                                     const Transition& step, const OptionStack& stack_before,
                                     const OptionStack& stack_after, RewardMode mode, double gamma);
std::vector<double> update_direction(const ActorParams& params, const CriticState& critic,
                                     const HierarchySpec& spec, const FeatureMap& features,
                                     const Transition& step, const OptionStack& stack_before,
                                     const OptionStack& stack_after, RewardMode mode, double gamma);

/// Slow-timescale update: theta <- clamp(theta + actor_rate * direction),
/// coordinatewise into [-bound, bound]. Returns the touched coordinates.
SparseUpdate actor_step(ActorParams& params, const CriticState& critic, const HierarchySpec& spec,
                        const FeatureMap& features, const Transition& step,
                        const OptionStack& stack_before, const OptionStack& stack_after,
                        const StepSchedule& schedule, long long t, RewardMode mode, double gamma);

struct LearnerConfig {
  RewardMode mode = RewardMode::average_reward;
  std::optional<double> gamma;  // required in discounted mode, forbidden otherwise
  StepSchedule schedule;
  long long total_steps = 0;
  /// Unified trace ids: [0, actor dim) for actor coordinates, then critic
  /// coordinates level by level, then the gain estimate. Empty selects one
  /// id per family (option-value weight, action policy, option policy).
  std::vector<int> trace_param_ids;
  std::uint64_t seed = 0;
  long long trace_every = 100;
  long long window = 1000;
  bool freeze_actor = false;
  int start_state = 0;
  double projection_bound = 50.0;

  void validate(const HierarchySpec& spec, const TabularMdp& mdp) const;
};

struct CyclePoint {
  long long step = 0;
  long long cycle = 0;
  double reward = 0.0;
  std::uint8_t route = 0;
  double gain_estimate = 0.0;
  bool operator==(const CyclePoint&) const = default;
};

struct WindowPoint {
  long long step = 0;
  double avg_reward = 0.0;
  double gain_estimate = 0.0;
  bool operator==(const WindowPoint&) const = default;
};

struct TracePoint {
  long long step = 0;
  int param_id = 0;
  double value = 0.0;
  bool operator==(const TracePoint&) const = default;
};

struct RunRecord {
  /// Whether the environment marks cycle completions at all; selects the
  /// primary reporting series (cycles vs reward windows).
  bool cyclic_env = false;
  std::vector<CyclePoint> cycles;    // one entry per completed cycle
  std::vector<WindowPoint> windows;  // fixed-size reward windows
  std::vector<TracePoint> traces;
  std::vector<int> trace_ids;
  ActorParams final_params;
  CriticState final_critic;
  /// Sup-norm excursion of theta from its value at 90% of the run.
  double final_decile_drift = 0.0;
  long long steps_completed = 0;
  bool diverged = false;
  std::string divergence_message;
};

/// Number of traceable coordinates (actor + critic + gain estimate).
int trace_space_size(const HierarchySpec& spec, const FeatureMap& features);
std::string trace_id_name(const HierarchySpec& spec, const FeatureMap& features, int id);
/// Default selection: one option-value weight, one action-policy score and,
/// at depth >= 2, one option-policy score, chosen deterministically from the
/// seed.
std::vector<int> default_trace_ids(const HierarchySpec& spec, const FeatureMap& features,
                                   std::uint64_t seed);

/// Runs the continuing-task loop: act with the bottom-level policy, step the
/// environment, resolve the termination cascade, then critic before actor.
/// Aborts with diagnostic state on any non-finite value.
RunRecord train(const TabularMdp& mdp, const HierarchySpec& spec, const LearnerConfig& config,
                const FeatureMap& features = {});

}  // namespace avgopt
