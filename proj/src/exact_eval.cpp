#include "avgopt/exact_eval.hpp"

#include <cmath>
#include <stdexcept>

#include "avgopt/kernels.hpp"

namespace avgopt {

namespace {

void check_compatible(const TabularMdp& mdp, const HierarchySpec& spec) {
  if (spec.n_states != mdp.n_states || spec.n_actions != mdp.n_actions) {
    throw std::invalid_argument("hierarchy spec does not match the MDP dimensions");
  }
}

}  // namespace

DenseMatrix marginal_env_transition(const TabularMdp& mdp, const ActorParams& params,
                                    const HierarchySpec& spec) {
  check_compatible(mdp, spec);
  const int n_stacks = spec.stack_count();
  DenseMatrix env(mdp.n_states * n_stacks, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      const OptionStack stack = stack_from_id(spec, k);
      const std::vector<double> action_probs = policy_probs(params, spec, spec.depth, s, stack);
      auto row = env.row_span(s * n_stacks + k);
      for (int a = 0; a < mdp.n_actions; ++a) {
        kernels::axpy(action_probs[a], mdp.transition_row(s, a), row);
      }
    }
  }
  return env;
}

AugmentedKernel one_step_kernel(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec) {
  check_compatible(mdp, spec);
  AugmentedKernel kernel;
  kernel.n_states = mdp.n_states;
  kernel.n_stacks = spec.stack_count();
  const int n = kernel.size();
  kernel.p = DenseMatrix(n, n);

  const DenseMatrix env = marginal_env_transition(mdp, params, spec);

  // Option transition rows at each arrival state, one per incoming stack.
  for (int next = 0; next < mdp.n_states; ++next) {
    for (int k = 0; k < kernel.n_stacks; ++k) {
      const OptionStack incoming = stack_from_id(spec, k);
      const std::vector<double> arrive =
          prefix_arrival_distribution(params, spec, next, incoming, spec.depth);
      for (int s = 0; s < mdp.n_states; ++s) {
        const double p_env = env.at(s * kernel.n_stacks + k, next);
        if (p_env == 0.0) continue;
        double* row = kernel.p.row(kernel.index(s, k)) + kernel.index(next, 0);
        kernels::axpy(p_env, arrive, {row, static_cast<std::size_t>(kernel.n_stacks)});
      }
    }
  }
  return kernel;
}

AugmentedKernel k_step_kernel(const AugmentedKernel& kernel, int k) {
  if (k < 1) throw std::invalid_argument("k_step_kernel: k must be >= 1");
  AugmentedKernel out = kernel;
  for (int step = 2; step <= k; ++step) out.p = matmul(kernel.p, out.p);
  return out;
}

std::vector<double> StationaryDistribution::joint_with_next_state(const AugmentedKernel& kernel) const {
  const int n_states = kernel.n_states;
  const int n_stacks = kernel.n_stacks;
  std::vector<double> joint(static_cast<std::size_t>(n_states) * n_stacks * n_states, 0.0);
  for (int s = 0; s < n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      const double* row = kernel.p.row(kernel.index(s, k));
      for (int next = 0; next < n_states; ++next) {
        double p_env = 0.0;
        for (int k2 = 0; k2 < n_stacks; ++k2) p_env += row[kernel.index(next, k2)];
        joint[(static_cast<std::size_t>(s) * n_stacks + k) * n_states + next] =
            d[kernel.index(s, k)] * p_env;
      }
    }
  }
  return joint;
}

StationaryDistribution stationary_distribution(const AugmentedKernel& kernel) {
  StationaryDistribution dist;
  dist.d = stationary_vector(kernel.p);
  return dist;
}

std::pair<ValueTables, AdvantageTables> solve_values(const TabularMdp& mdp, const ActorParams& params,
                                                     const HierarchySpec& spec) {
  check_compatible(mdp, spec);
  const AugmentedKernel kernel = one_step_kernel(mdp, params, spec);
  const StationaryDistribution dist = stationary_distribution(kernel);
  const int n = kernel.size();
  const int n_stacks = kernel.n_stacks;

  // Expected one-step reward per augmented state.
  std::vector<double> mean_reward(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      const OptionStack stack = stack_from_id(spec, k);
      const std::vector<double> action_probs = policy_probs(params, spec, spec.depth, s, stack);
      double acc = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) acc += action_probs[a] * mdp.reward_at(s, a);
      mean_reward[kernel.index(s, k)] = acc;
    }
  }

  ValueTables tables;
  tables.gain = kernels::dot(dist.d, mean_reward);

  // Poisson equation q = r - J + P q, pinned down by requiring the
  // stationary-weighted mean of q to vanish: (I - P + 1 d^T) q = r - J.
  DenseMatrix system(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      system.at(i, j) = (i == j ? 1.0 : 0.0) - kernel.p.at(i, j) + dist.d[j];
    }
  }
  std::vector<double> rhs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rhs[i] = mean_reward[i] - tables.gain;
  std::vector<double> full_stack_value;
  try {
    full_stack_value = solve_linear(system, rhs);
  } catch (const std::runtime_error&) {
    throw std::runtime_error(
        "solve_values: the anchored Poisson system is singular; the augmented chain violates the "
        "unichain assumption");
  }

  // Prefix option values by integrating out deeper selections.
  tables.option_value.assign(static_cast<std::size_t>(spec.depth), {});
  tables.option_value[spec.depth - 1] = full_stack_value;
  for (int level = spec.depth - 2; level >= 0; --level) {
    const int n_prefixes = spec.prefix_count(level);
    std::vector<double> values(static_cast<std::size_t>(mdp.n_states) * n_prefixes, 0.0);
    const int stride = n_prefixes;  // id step of one option at level+1
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int q = 0; q < n_prefixes; ++q) {
        OptionStack context = stack_from_id(spec, q);
        const std::vector<double> probs = policy_probs(params, spec, level + 1, s, context);
        double acc = 0.0;
        for (int o = 0; o < spec.options_at(level + 1); ++o) {
          acc += probs[o] *
                 tables.option_value[level + 1][static_cast<std::size_t>(s) * spec.prefix_count(level + 1) +
                                                q + stride * o];
        }
        values[static_cast<std::size_t>(s) * n_prefixes + q] = acc;
      }
    }
    tables.option_value[level] = std::move(values);
  }

  // Arrival value: marginalize which levels terminate, keeping the value of
  // the prefix that survives. The primitive level always terminates, so the
  // product of deeper continuation terms starts at level depth-1.
  tables.arrival_value.assign(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      const OptionStack stack = stack_from_id(spec, k);
      double deeper_terminated = 1.0;
      double acc = 0.0;
      for (int level = spec.depth - 1; level >= 0; --level) {
        const double beta = termination_prob(params, spec, level, s, stack);
        const double keep = (1.0 - beta) * deeper_terminated;
        acc += keep * tables.option_value[level][static_cast<std::size_t>(s) * spec.prefix_count(level) +
                                                 prefix_id(spec, stack, level)];
        deeper_terminated *= beta;
      }
      tables.arrival_value[kernel.index(s, k)] = acc;
    }
  }

  // Primitive-action values under the full stack.
  tables.action_value.assign(static_cast<std::size_t>(n) * mdp.n_actions, 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        auto row = mdp.transition_row(s, a);
        double expected_arrival = 0.0;
        for (int next = 0; next < mdp.n_states; ++next) {
          if (row[next] != 0.0) expected_arrival += row[next] * tables.arrival_value[kernel.index(next, k)];
        }
        tables.action_value[(static_cast<std::size_t>(s) * n_stacks + k) * mdp.n_actions + a] =
            mdp.reward_at(s, a) - tables.gain + expected_arrival;
      }
    }
  }

  // Advantage of continuing a prefix versus terminating upward.
  AdvantageTables advantage;
  advantage.value.assign(static_cast<std::size_t>(std::max(0, spec.depth - 1)), {});
  for (int level = 1; level <= spec.depth - 1; ++level) {
    const int n_prefixes = spec.prefix_count(level);
    std::vector<double> adv(static_cast<std::size_t>(mdp.n_states) * n_prefixes, 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int q = 0; q < n_prefixes; ++q) {
        const OptionStack context = stack_from_id(spec, q);
        // Value after terminating this level: the shallower prefix that
        // survives, weighted by which of the remaining levels terminate too.
        double upward = 0.0;
        double above_terminated = 1.0;
        for (int i = level - 1; i >= 0; --i) {
          const double beta = termination_prob(params, spec, i, s, context);
          upward += (1.0 - beta) * above_terminated *
                    tables.option_value[i][static_cast<std::size_t>(s) * spec.prefix_count(i) +
                                           prefix_id(spec, context, i)];
          above_terminated *= beta;
        }
        adv[static_cast<std::size_t>(s) * n_prefixes + q] =
            tables.option_value[level][static_cast<std::size_t>(s) * n_prefixes + q] - upward;
      }
    }
    advantage.value[level - 1] = std::move(adv);
  }

  return {std::move(tables), std::move(advantage)};
}

double exact_gain(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec) {
  const AugmentedKernel kernel = one_step_kernel(mdp, params, spec);
  const StationaryDistribution dist = stationary_distribution(kernel);
  double gain = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < kernel.n_stacks; ++k) {
      const OptionStack stack = stack_from_id(spec, k);
      const std::vector<double> action_probs = policy_probs(params, spec, spec.depth, s, stack);
      double mean_reward = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) mean_reward += action_probs[a] * mdp.reward_at(s, a);
      gain += dist.d[kernel.index(s, k)] * mean_reward;
    }
  }
  return gain;
}

void FlatPolicy::validate() const {
  if (n_states < 1 || n_actions < 1 ||
      probs.size() != static_cast<std::size_t>(n_states) * n_actions) {
    throw std::invalid_argument("flat policy: shape mismatch");
  }
  for (int s = 0; s < n_states; ++s) {
    double total = 0.0;
    for (double p : row(s)) {
      if (p < 0.0 || !std::isfinite(p)) throw std::invalid_argument("flat policy: invalid probability");
      total += p;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("flat policy: rows must sum to 1");
  }
}

FlatPolicy uniform_flat_policy(const TabularMdp& mdp) {
  FlatPolicy p;
  p.n_states = mdp.n_states;
  p.n_actions = mdp.n_actions;
  p.probs.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 1.0 / mdp.n_actions);
  return p;
}

FlatPolicy committed_flat_policy(const TabularMdp& mdp, int action) {
  if (action < 0 || action >= mdp.n_actions) throw std::invalid_argument("committed policy: invalid action");
  FlatPolicy p;
  p.n_states = mdp.n_states;
  p.n_actions = mdp.n_actions;
  p.probs.assign(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions, 0.0);
  for (int s = 0; s < mdp.n_states; ++s) p.probs[static_cast<std::size_t>(s) * mdp.n_actions + action] = 1.0;
  return p;
}

std::vector<double> discounted_values(const TabularMdp& mdp, const FlatPolicy& policy, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("discounted_values: gamma must lie in (0,1)");
  }
  policy.validate();
  if (policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions) {
    throw std::invalid_argument("discounted_values: policy does not match the MDP");
  }
  const int n = mdp.n_states;
  DenseMatrix system(n, n);
  std::vector<double> rhs(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    auto pi = policy.row(s);
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (pi[a] == 0.0) continue;
      rhs[s] += pi[a] * mdp.reward_at(s, a);
      auto row = mdp.transition_row(s, a);
      for (int next = 0; next < n; ++next) system.at(s, next) -= gamma * pi[a] * row[next];
    }
    system.at(s, s) += 1.0;
  }
  return solve_linear(system, rhs);
}

}  // namespace avgopt
