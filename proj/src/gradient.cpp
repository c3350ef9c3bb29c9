#include "avgopt/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "avgopt/kernels.hpp"
#include "avgopt/rng.hpp"

namespace avgopt {

GradientVector gain_gradient(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec,
                             const GradientTerms& terms) {
  const AugmentedKernel kernel = one_step_kernel(mdp, params, spec);
  const StationaryDistribution dist = stationary_distribution(kernel);
  const auto [tables, advantage] = solve_values(mdp, params, spec);
  const DenseMatrix env = marginal_env_transition(mdp, params, spec);
  const int n_stacks = kernel.n_stacks;

  GradientVector grad;
  grad.values.assign(static_cast<std::size_t>(param_count(spec)), 0.0);

  // Bottom-level policy scores, weighted by the stationary distribution and
  // the primitive action values.
  if (terms.action_term) {
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int k = 0; k < n_stacks; ++k) {
        const double weight = dist.d[kernel.index(s, k)];
        if (weight == 0.0) continue;
        const OptionStack stack = stack_from_id(spec, k);
        const std::vector<double> probs = policy_probs(params, spec, spec.depth, s, stack);
        const double* q = tables.action_value.data() +
                          (static_cast<std::size_t>(s) * n_stacks + k) * mdp.n_actions;
        double mean_q = 0.0;
        for (int a = 0; a < mdp.n_actions; ++a) mean_q += probs[a] * q[a];
        const int base = policy_param_index(spec, spec.depth, s, prefix_id(spec, stack, spec.depth - 1), 0);
        for (int a = 0; a < mdp.n_actions; ++a) {
          grad.values[base + a] += weight * probs[a] * (q[a] - mean_q);
        }
      }
    }
  }

  if (spec.depth == 1 || (!terms.option_term && !terms.termination_term)) return grad;

  // Steady-state weight of arriving at `next` with stack k still active:
  // sum over source states of d(s,k) times the option-marginal move.
  DenseMatrix arrive_weight(n_stacks, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      const double weight = dist.d[kernel.index(s, k)];
      if (weight == 0.0) continue;
      kernels::axpy(weight, env.row_span(s * n_stacks + k), arrive_weight.row_span(k));
    }
  }

  for (int next = 0; next < mdp.n_states; ++next) {
    for (int k = 0; k < n_stacks; ++k) {
      const double weight = arrive_weight.at(k, next);
      if (weight == 0.0) continue;
      const OptionStack stack = stack_from_id(spec, k);

      // continue_from[l] = probability that levels l..depth-1 all terminate
      // at the arrival state under the incoming stack.
      std::vector<double> beta(static_cast<std::size_t>(spec.depth), 0.0);
      std::vector<double> terminated_from(static_cast<std::size_t>(spec.depth) + 1, 1.0);
      for (int l = spec.depth - 1; l >= 1; --l) {
        beta[l] = termination_prob(params, spec, l, next, stack);
        terminated_from[l] = beta[l] * terminated_from[l + 1];
      }

      for (int level = 1; level <= spec.depth - 1; ++level) {
        // Re-selection of the level's option, conditioned on everything
        // deeper having terminated; weighted by the exact distribution of
        // the surviving prefix.
        if (terms.option_term) {
          const double level_weight = weight * terminated_from[level];
          if (level_weight != 0.0) {
            const std::vector<double> prefix_probs =
                prefix_arrival_distribution(params, spec, next, stack, level);
            const int stride = spec.prefix_count(level - 1);
            for (int q = 0; q < stride; ++q) {
              if (prefix_probs[q] == 0.0) continue;
              const double context_weight = level_weight * prefix_probs[q];
              const OptionStack context = stack_from_id(spec, q);
              const std::vector<double> probs = policy_probs(params, spec, level, next, context);
              const std::vector<double>& value = tables.option_value[level];
              double mean_value = 0.0;
              for (int o = 0; o < spec.options_at(level); ++o) {
                mean_value +=
                    probs[o] * value[static_cast<std::size_t>(next) * spec.prefix_count(level) + q + stride * o];
              }
              const int base = policy_param_index(spec, level, next, q, 0);
              for (int o = 0; o < spec.options_at(level); ++o) {
                const double v =
                    value[static_cast<std::size_t>(next) * spec.prefix_count(level) + q + stride * o];
                grad.values[base + o] += context_weight * probs[o] * (v - mean_value);
              }
            }
          }
        }

        // Termination scores push against the advantage of the prefix that
        // would be abandoned, weighted by the deeper levels terminating.
        if (terms.termination_term) {
          const int prefix = prefix_id(spec, stack, level);
          const double adv =
              advantage.value[level - 1][static_cast<std::size_t>(next) * spec.prefix_count(level) + prefix];
          const int idx = termination_param_index(spec, level, next, prefix);
          grad.values[idx] -=
              weight * terminated_from[level + 1] * adv * beta[level] * (1.0 - beta[level]);
        }
      }
    }
  }

  return grad;
}

GradientVector finite_difference_gradient(const TabularMdp& mdp, const ActorParams& params,
                                          const HierarchySpec& spec, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_difference_gradient: step must be positive");
  GradientVector grad;
  const int dim = param_count(spec);
  grad.values.assign(static_cast<std::size_t>(dim), 0.0);
  ActorParams probe = params;
  for (int i = 0; i < dim; ++i) {
    const double original = probe.theta[i];
    double plus = 0.0;
    double minus = 0.0;
    try {
      probe.theta[i] = original + step;
      plus = exact_gain(mdp, probe, spec);
      probe.theta[i] = original - step;
      minus = exact_gain(mdp, probe, spec);
    } catch (const NotUnichainError& e) {
      throw NotUnichainError("finite differences at coordinate " + std::to_string(i) + " (" +
                             param_name(spec, i) + "): " + e.what());
    }
    probe.theta[i] = original;
    grad.values[i] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

namespace {

TabularMdp random_unichain_mdp(Rng& rng, int n_states, int n_actions) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.transition.resize(static_cast<std::size_t>(n_states) * n_actions * n_states);
  mdp.reward.resize(static_cast<std::size_t>(n_states) * n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      const std::size_t base = (static_cast<std::size_t>(s) * n_actions + a) * n_states;
      for (int next = 0; next < n_states; ++next) {
        // Dirichlet(1) row via normalized exponentials
        const double e = -std::log(1.0 - rng.uniform());
        mdp.transition[base + next] = e;
        total += e;
      }
      for (int next = 0; next < n_states; ++next) mdp.transition[base + next] /= total;
      mdp.reward[static_cast<std::size_t>(s) * n_actions + a] = rng.uniform(-1.0, 1.0);
    }
  }
  mdp.validate();
  return mdp;
}

}  // namespace

GradcheckReport run_gradcheck(int instances, std::uint64_t seed, double step, double tolerance) {
  if (instances < 0) throw std::invalid_argument("run_gradcheck: instance count must be >= 0");
  GradcheckReport report;
  report.instances = instances;
  report.seed = seed;
  report.step = step;
  report.tolerance = tolerance;

  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    GradcheckInstance result;
    result.index = i;
    result.depth = 2 + rng.uniform_int(2);
    result.n_states = 3 + rng.uniform_int(4);
    result.n_actions = 2 + rng.uniform_int(2);
    for (int l = 1; l < result.depth; ++l) result.options_per_level.push_back(2 + rng.uniform_int(2));

    HierarchySpec spec;
    spec.depth = result.depth;
    spec.options_per_level = result.options_per_level;
    spec.n_actions = result.n_actions;
    spec.n_states = result.n_states;
    spec.validate();

    TabularMdp mdp;
    ActorParams params;
    // Full-support rows make the augmented chain unichain for any soft
    // policy; the retry loop guards the general case.
    for (int attempt = 0;; ++attempt) {
      mdp = random_unichain_mdp(rng, result.n_states, result.n_actions);
      params = make_zero_params(spec);
      for (double& w : params.theta) w = rng.uniform(-1.0, 1.0);
      try {
        stationary_distribution(one_step_kernel(mdp, params, spec));
        break;
      } catch (const NotUnichainError&) {
        if (attempt >= 100) throw;
      }
    }

    const GradientVector exact = gain_gradient(mdp, params, spec);
    const GradientVector fd = finite_difference_gradient(mdp, params, spec, step);
    const double denom = std::max(kernels::max_abs(exact.values), 1e-8);

    std::vector<double> rel(exact.values.size());
    std::map<std::string, double> block_max;
    for (std::size_t j = 0; j < exact.values.size(); ++j) {
      rel[j] = std::fabs(exact.values[j] - fd.values[j]) / denom;
      auto& entry = block_max[param_block(spec, static_cast<int>(j))];
      entry = std::max(entry, rel[j]);
    }
    result.max_rel_error = *std::max_element(rel.begin(), rel.end());
    std::vector<double> sorted = rel;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    result.median_rel_error = sorted[sorted.size() / 2];
    result.block_errors.assign(block_max.begin(), block_max.end());
    result.pass = result.max_rel_error < tolerance;

    report.max_rel_error = std::max(report.max_rel_error, result.max_rel_error);
    report.pass = report.pass && result.pass;
    report.results.push_back(std::move(result));
  }
  return report;
}

std::string gradcheck_to_json(const GradcheckReport& report) {
  nlohmann::json j;
  j["instances"] = report.instances;
  j["seed"] = report.seed;
  j["step"] = report.step;
  j["tolerance"] = report.tolerance;
  j["max_rel_error"] = report.max_rel_error;
  j["pass"] = report.pass;
  auto results = nlohmann::json::array();
  for (const auto& r : report.results) {
    nlohmann::json item;
    item["index"] = r.index;
    item["depth"] = r.depth;
    item["n_states"] = r.n_states;
    item["options_per_level"] = r.options_per_level;
    item["n_actions"] = r.n_actions;
    item["max_rel_error"] = r.max_rel_error;
    item["median_rel_error"] = r.median_rel_error;
    for (const auto& [block, err] : r.block_errors) item["blocks"][block] = err;
    item["pass"] = r.pass;
    results.push_back(std::move(item));
  }
  j["results"] = std::move(results);
  return j.dump(2);
}

std::string gradcheck_table(const GradcheckReport& report) {
  std::ostringstream out;
  out << "gradient check: " << report.instances << " instances, seed " << report.seed << ", step "
      << report.step << ", tolerance " << report.tolerance << "\n";
  out << " idx depth states actions   max rel err   median      result\n";
  for (const auto& r : report.results) {
    char line[160];
    std::snprintf(line, sizeof(line), "%4d %5d %6d %7d   %11.3e   %.3e   %s\n", r.index, r.depth,
                  r.n_states, r.n_actions, r.max_rel_error, r.median_rel_error, r.pass ? "pass" : "FAIL");
    out << line;
  }
  char total[96];
  std::snprintf(total, sizeof(total), "overall max rel err %.3e -> %s\n", report.max_rel_error,
                report.pass ? "pass" : "FAIL");
  out << total;
  return out.str();
}

}  // namespace avgopt
