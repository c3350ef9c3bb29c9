#include "avgopt/learner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avgopt {

void StepSchedule::validate() const {
  if (actor_scale <= 0.0 || critic_scale <= 0.0 || gain_scale <= 0.0) {
    throw std::invalid_argument("step schedule: scales must be positive");
  }
  if (!(critic_decay > 0.5)) {
    throw std::invalid_argument("step schedule: critic decay must exceed 0.5 for square summability");
  }
  if (!(actor_decay > critic_decay)) {
    throw std::invalid_argument("step schedule: actor decay must exceed critic decay so the actor/critic "
                                "rate ratio vanishes");
  }
  if (!(actor_decay <= 1.0)) {
    throw std::invalid_argument("step schedule: actor decay above 1 makes the step sums finite");
  }
  if (actor_cap <= 0.0 || critic_cap <= 0.0 || gain_cap <= 0.0) {
    throw std::invalid_argument("step schedule: rate caps must be positive");
  }
}

double StepSchedule::actor_rate(long long t) const {
  return std::min(actor_cap, actor_scale * std::pow(1.0 + static_cast<double>(t), -actor_decay));
}
double StepSchedule::critic_rate(long long t) const {
  return std::min(critic_cap, critic_scale * std::pow(1.0 + static_cast<double>(t), -critic_decay));
}
double StepSchedule::gain_rate(long long t) const {
  return std::min(gain_cap, gain_scale * std::pow(1.0 + static_cast<double>(t), -critic_decay));
}

CriticState make_zero_critic(const HierarchySpec& spec, const FeatureMap& features) {
  features.validate(spec);
  CriticState critic;
  critic.weights.resize(static_cast<std::size_t>(spec.depth));
  for (int level = 0; level < spec.depth; ++level) {
    critic.weights[level].assign(static_cast<std::size_t>(features.dimension(spec, level)), 0.0);
  }
  return critic;
}

double option_value_estimate(const CriticState& critic, const HierarchySpec& spec,
                             const FeatureMap& features, int level, int state, int prefix) {
  const int ctx = state * spec.prefix_count(level) + prefix;
  return features.value(spec, level, ctx, critic.weights[level]);
}

double arrival_value_estimate(const CriticState& critic, const ActorParams& params,
                              const HierarchySpec& spec, const FeatureMap& features, int state,
                              const OptionStack& incoming) {
  double deeper_terminated = 1.0;
  double acc = 0.0;
  for (int level = spec.depth - 1; level >= 0; --level) {
    const double beta = termination_prob(params, spec, level, state, incoming);
    acc += (1.0 - beta) * deeper_terminated *
           option_value_estimate(critic, spec, features, level, state, prefix_id(spec, incoming, level));
    deeper_terminated *= beta;
  }
  return acc;
}

double advantage_estimate(const CriticState& critic, const ActorParams& params, const HierarchySpec& spec,
                          const FeatureMap& features, int level, int state, const OptionStack& context) {
  double upward = 0.0;
  double above_terminated = 1.0;
  for (int i = level - 1; i >= 0; --i) {
    const double beta = termination_prob(params, spec, i, state, context);
    upward += (1.0 - beta) * above_terminated *
              option_value_estimate(critic, spec, features, i, state, prefix_id(spec, context, i));
    above_terminated *= beta;
  }
  return option_value_estimate(critic, spec, features, level, state, prefix_id(spec, context, level)) -
         upward;
}

double td_error(const Transition& step, const OptionStack& stack_before, const CriticState& critic,
                const ActorParams& params, const HierarchySpec& spec, const FeatureMap& features,
                RewardMode mode, double gamma) {
  const double arrival =
      arrival_value_estimate(critic, params, spec, features, step.next_state, stack_before);
  const double current = option_value_estimate(critic, spec, features, spec.depth - 1, step.state,
                                               prefix_id(spec, stack_before, spec.depth - 1));
  if (mode == RewardMode::average_reward) {
    return step.reward - critic.gain_estimate + arrival - current;
  }
  return step.reward + gamma * arrival - current;
}

void critic_step(CriticState& critic, const Transition& step, const OptionStack& stack_before,
                 const ActorParams& params, const HierarchySpec& spec, const FeatureMap& features,
                 const StepSchedule& schedule, long long t, RewardMode mode, double gamma) {
  // One sampled target shared by every prefix level: the deeper selections
  // were drawn from the intra-option policies, so the target is unbiased at
  // each level's own context. Every head regresses on its own residual;
  // sharing the full-stack error instead lets the gap between heads feed
  // back through the arrival value and diverge.
  const double arrival =
      arrival_value_estimate(critic, params, spec, features, step.next_state, stack_before);
  const double target = mode == RewardMode::average_reward
                            ? step.reward - critic.gain_estimate + arrival
                            : step.reward + gamma * arrival;
  if (mode == RewardMode::average_reward) {
    critic.gain_estimate += schedule.gain_rate(t) * (step.reward - critic.gain_estimate);
  }
  const double rate = schedule.critic_rate(t);
  for (int level = 0; level < spec.depth; ++level) {
    const int ctx = step.state * spec.prefix_count(level) + prefix_id(spec, stack_before, level);
    const double residual = target - features.value(spec, level, ctx, critic.weights[level]);
    features.accumulate(spec, level, ctx, rate * residual, critic.weights[level]);
  }
}

namespace {

void add_sparse_policy_log_grad(const ActorParams& params, const HierarchySpec& spec, int level, int state,
                                const OptionStack& context, int choice, double scale, SparseUpdate& out) {
  const std::vector<double> probs = policy_probs(params, spec, level, state, context);
  const int base = policy_param_index(spec, level, state, prefix_id(spec, context, level - 1), 0);
  for (int c = 0; c < spec.choices_at(level); ++c) {
    out.entries.emplace_back(base + c, scale * ((c == choice ? 1.0 : 0.0) - probs[c]));
  }
}

}  // namespace

SparseUpdate update_direction_sparse(const ActorParams& params, const CriticState& critic,
                                     const HierarchySpec& spec, const FeatureMap& features,
                                     const Transition& step, const OptionStack& stack_before,
                                     const OptionStack& stack_after, RewardMode mode, double gamma) {
  SparseUpdate direction;
  const int next = step.next_state;

  const double arrival = arrival_value_estimate(critic, params, spec, features, next, stack_before);
  const double action_value = mode == RewardMode::average_reward
                                  ? step.reward - critic.gain_estimate + arrival
                                  : step.reward + gamma * arrival;
  add_sparse_policy_log_grad(params, spec, spec.depth, step.state, stack_before, step.action, action_value,
                             direction);

  if (spec.depth > 1) {
    // Probability that levels l..depth-1 terminate at the arrival state.
    std::vector<double> beta(static_cast<std::size_t>(spec.depth), 0.0);
    std::vector<double> terminated_from(static_cast<std::size_t>(spec.depth) + 1, 1.0);
    for (int l = spec.depth - 1; l >= 1; --l) {
      beta[l] = termination_prob(params, spec, l, next, stack_before);
      terminated_from[l] = beta[l] * terminated_from[l + 1];
    }
    for (int level = 1; level <= spec.depth - 1; ++level) {
      const double reselect_value = option_value_estimate(critic, spec, features, level, next,
                                                          prefix_id(spec, stack_after, level));
      add_sparse_policy_log_grad(params, spec, level, next, stack_after, stack_after.ids[level],
                                 reselect_value * terminated_from[level], direction);

      const double adv = advantage_estimate(critic, params, spec, features, level, next, stack_before);
      const double beta_grad_scale = -adv * terminated_from[level + 1] * (1.0 - beta[level]);
      direction.entries.emplace_back(
          termination_param_index(spec, level, next, prefix_id(spec, stack_before, level)),
          beta_grad_scale);
    }
  }
  return direction;
}

std::vector<double> update_direction(const ActorParams& params, const CriticState& critic,
                                     const HierarchySpec& spec, const FeatureMap& features,
                                     const Transition& step, const OptionStack& stack_before,
                                     const OptionStack& stack_after, RewardMode mode, double gamma) {
  std::vector<double> dense(static_cast<std::size_t>(param_count(spec)), 0.0);
  const SparseUpdate sparse = update_direction_sparse(params, critic, spec, features, step, stack_before,
                                                      stack_after, mode, gamma);
  for (const auto& [idx, value] : sparse.entries) dense[idx] += value;
  return dense;
}

SparseUpdate actor_step(ActorParams& params, const CriticState& critic, const HierarchySpec& spec,
                        const FeatureMap& features, const Transition& step,
                        const OptionStack& stack_before, const OptionStack& stack_after,
                        const StepSchedule& schedule, long long t, RewardMode mode, double gamma) {
  SparseUpdate direction = update_direction_sparse(params, critic, spec, features, step, stack_before,
                                                   stack_after, mode, gamma);
  const double rate = schedule.actor_rate(t);
  for (const auto& [idx, value] : direction.entries) {
    params.theta[idx] = std::clamp(params.theta[idx] + rate * value, -params.bound, params.bound);
  }
  return direction;
}

void LearnerConfig::validate(const HierarchySpec& spec, const TabularMdp& mdp) const {
  schedule.validate();
  if (mode == RewardMode::discounted) {
    if (!gamma.has_value() || !(*gamma > 0.0 && *gamma < 1.0)) {
      throw std::invalid_argument("learner config: discounted mode requires gamma in (0,1)");
    }
  } else if (gamma.has_value()) {
    throw std::invalid_argument("learner config: gamma has no effect in average-reward mode");
  }
  if (total_steps < 0) throw std::invalid_argument("learner config: total_steps must be >= 0");
  if (trace_every < 1 || window < 1) {
    throw std::invalid_argument("learner config: trace_every and window must be positive");
  }
  if (start_state < 0 || start_state >= mdp.n_states) {
    throw std::invalid_argument("learner config: start state out of range");
  }
  if (projection_bound <= 0.0) throw std::invalid_argument("learner config: projection bound must be positive");
  (void)spec;
}

int trace_space_size(const HierarchySpec& spec, const FeatureMap& features) {
  int total = param_count(spec);
  for (int level = 0; level < spec.depth; ++level) total += features.dimension(spec, level);
  return total + 1;  // gain estimate
}

namespace {

struct TraceLocation {
  enum class Kind { actor, critic, gain } kind = Kind::actor;
  int level = 0;  // critic only
  int offset = 0;
};

TraceLocation locate_trace(const HierarchySpec& spec, const FeatureMap& features, int id) {
  const int actor_dim = param_count(spec);
  if (id < 0) throw std::invalid_argument("trace id out of range");
  if (id < actor_dim) return {TraceLocation::Kind::actor, 0, id};
  int rest = id - actor_dim;
  for (int level = 0; level < spec.depth; ++level) {
    const int dim = features.dimension(spec, level);
    if (rest < dim) return {TraceLocation::Kind::critic, level, rest};
    rest -= dim;
  }
  if (rest == 0) return {TraceLocation::Kind::gain, 0, 0};
  throw std::invalid_argument("trace id out of range");
}

double trace_value(const HierarchySpec& spec, const FeatureMap& features, const ActorParams& params,
                   const CriticState& critic, int id) {
  const TraceLocation loc = locate_trace(spec, features, id);
  switch (loc.kind) {
    case TraceLocation::Kind::actor: return params.theta[loc.offset];
    case TraceLocation::Kind::critic: return critic.weights[loc.level][loc.offset];
    case TraceLocation::Kind::gain: return critic.gain_estimate;
  }
  return 0.0;
}

}  // namespace

std::string trace_id_name(const HierarchySpec& spec, const FeatureMap& features, int id) {
  const TraceLocation loc = locate_trace(spec, features, id);
  switch (loc.kind) {
    case TraceLocation::Kind::actor: return param_name(spec, loc.offset);
    case TraceLocation::Kind::critic:
      return "qhat" + std::to_string(loc.level) + "[" + std::to_string(loc.offset) + "]";
    case TraceLocation::Kind::gain: return "gain_estimate";
  }
  return "";
}

std::vector<int> default_trace_ids(const HierarchySpec& spec, const FeatureMap& features,
                                   std::uint64_t seed) {
  Rng rng(seed ^ 0x7261636573ULL);
  std::vector<int> ids;
  // option-value family: a weight of the deepest head
  const int actor_dim = param_count(spec);
  int critic_offset = actor_dim;
  for (int level = 0; level < spec.depth - 1; ++level) critic_offset += features.dimension(spec, level);
  ids.push_back(critic_offset + rng.uniform_int(features.dimension(spec, spec.depth - 1)));
  // action policy family
  const int bottom = spec.depth;
  const int bottom_size = spec.policy_contexts(bottom) * spec.choices_at(bottom);
  ids.push_back(policy_param_index(spec, bottom, 0, 0, 0) + rng.uniform_int(bottom_size));
  // option policy family, when the hierarchy has one
  if (spec.depth >= 2) {
    const int size = spec.policy_contexts(1) * spec.choices_at(1);
    ids.push_back(policy_param_index(spec, 1, 0, 0, 0) + rng.uniform_int(size));
  }
  return ids;
}

RunRecord train(const TabularMdp& mdp, const HierarchySpec& spec, const LearnerConfig& config,
                const FeatureMap& features) {
  mdp.validate();
  spec.validate();
  config.validate(spec, mdp);
  features.validate(spec);
  if (spec.n_states != mdp.n_states || spec.n_actions != mdp.n_actions) {
    throw std::invalid_argument("train: hierarchy spec does not match the MDP");
  }

  RunRecord record;
  record.cyclic_env = mdp.has_cycle_events();
  record.trace_ids = config.trace_param_ids.empty()
                         ? default_trace_ids(spec, features, config.seed)
                         : config.trace_param_ids;
  for (int id : record.trace_ids) locate_trace(spec, features, id);  // reject unknown ids

  ActorParams params = make_zero_params(spec, config.projection_bound);
  CriticState critic = make_zero_critic(spec, features);
  Rng rng(config.seed);
  const double gamma = config.gamma.value_or(0.0);

  int state = config.start_state;
  OptionStack stack = OptionStack::root(spec);
  for (int level = 1; level <= spec.depth - 1; ++level) {
    stack.ids[level] = rng.categorical(policy_probs(params, spec, level, state, stack));
  }

  const long long decile_start = config.total_steps - config.total_steps / 10;
  std::vector<double> theta_ref;
  double drift = 0.0;

  double window_reward = 0.0;
  double cycle_reward = 0.0;
  long long cycles_done = 0;

  for (long long t = 0; t < config.total_steps; ++t) {
    if (t == decile_start) theta_ref = params.theta;

    const int action = rng.categorical(policy_probs(params, spec, spec.depth, state, stack));
    const Transition step = sample_step(mdp, state, action, rng);
    const ArrivalSample arrival = sample_arrival(params, spec, step.next_state, stack, rng);

    critic_step(critic, step, stack, params, spec, features, config.schedule, t, config.mode, gamma);

    if (!std::isfinite(critic.gain_estimate) ||
        !std::isfinite(option_value_estimate(critic, spec, features, spec.depth - 1, step.state,
                                             prefix_id(spec, stack, spec.depth - 1)))) {
      record.diverged = true;
      record.divergence_message =
          "non-finite critic value at step " + std::to_string(t) + " (state " + std::to_string(state) + ")";
      record.steps_completed = t;
      break;
    }

    if (!config.freeze_actor) {
      const SparseUpdate touched = actor_step(params, critic, spec, features, step, stack, arrival.stack,
                                              config.schedule, t, config.mode, gamma);
      bool finite = true;
      for (const auto& [idx, value] : touched.entries) {
        if (!std::isfinite(params.theta[idx])) finite = false;
        if (t >= decile_start && !theta_ref.empty()) {
          drift = std::max(drift, std::fabs(params.theta[idx] - theta_ref[idx]));
        }
      }
      if (!finite) {
        record.diverged = true;
        record.divergence_message = "non-finite actor weight at step " + std::to_string(t);
        record.steps_completed = t;
        break;
      }
    }

    window_reward += step.reward;
    cycle_reward += step.reward;
    if (step.cycle_completed) {
      ++cycles_done;
      record.cycles.push_back({t, cycles_done, cycle_reward, step.route, critic.gain_estimate});
      cycle_reward = 0.0;
    }
    if ((t + 1) % config.window == 0) {
      record.windows.push_back(
          {t, window_reward / static_cast<double>(config.window), critic.gain_estimate});
      window_reward = 0.0;
    }
    if ((t + 1) % config.trace_every == 0) {
      for (int id : record.trace_ids) {
        record.traces.push_back({t, id, trace_value(spec, features, params, critic, id)});
      }
    }

    state = step.next_state;
    stack = arrival.stack;
  }

  if (!record.diverged) record.steps_completed = config.total_steps;
  record.final_params = std::move(params);
  record.final_critic = std::move(critic);
  record.final_decile_drift = drift;
  return record;
}

}  // namespace avgopt
