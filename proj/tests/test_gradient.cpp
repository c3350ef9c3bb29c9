#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avgopt/gradient.hpp"
#include "avgopt/kernels.hpp"
#include "oracles.hpp"

using namespace avgopt;

namespace {

HierarchySpec make_spec(int depth, std::vector<int> options, const TabularMdp& mdp) {
  HierarchySpec spec;
  spec.depth = depth;
  spec.options_per_level = std::move(options);
  spec.n_actions = mdp.n_actions;
  spec.n_states = mdp.n_states;
  spec.validate();
  return spec;
}

TabularMdp random_mdp(Rng& rng, int n_states, int n_actions) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.transition.resize(static_cast<std::size_t>(n_states) * n_actions * n_states);
  mdp.reward.resize(static_cast<std::size_t>(n_states) * n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      const std::size_t base = (static_cast<std::size_t>(s) * n_actions + a) * n_states;
      double total = 0.0;
      for (int next = 0; next < n_states; ++next) {
        mdp.transition[base + next] = -std::log(1.0 - rng.uniform());
        total += mdp.transition[base + next];
      }
      for (int next = 0; next < n_states; ++next) mdp.transition[base + next] /= total;
      mdp.reward[static_cast<std::size_t>(s) * n_actions + a] = rng.uniform(-1.0, 1.0);
    }
  }
  mdp.validate();
  return mdp;
}

ActorParams random_params(const HierarchySpec& spec, Rng& rng) {
  ActorParams params = make_zero_params(spec);
  for (double& w : params.theta) w = rng.uniform(-1.0, 1.0);
  return params;
}

double rel_error(const GradientVector& a, const GradientVector& b) {
  const double denom = std::max(kernels::max_abs(a.values), 1e-8);
  return kernels::max_abs_diff(a.values, b.values) / denom;
}

}  // namespace

TEST_CASE("constant rewards have zero gradient") {
  Rng rng(7);
  TabularMdp mdp = random_mdp(rng, 4, 2);
  for (double& r : mdp.reward) r = 1.3;
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const ActorParams params = random_params(spec, rng);
  const GradientVector exact = gain_gradient(mdp, params, spec);
  CHECK(kernels::max_abs(exact.values) < 1e-10);
  const GradientVector fd = finite_difference_gradient(mdp, params, spec, 1e-5);
  CHECK(kernels::max_abs(fd.values) < 1e-9);
}

TEST_CASE("flat gradient matches the independent oracle") {
  Rng rng(17);
  const TabularMdp mdp = random_mdp(rng, 4, 3);
  const HierarchySpec spec = make_spec(1, {}, mdp);
  const ActorParams params = random_params(spec, rng);
  const GradientVector exact = gain_gradient(mdp, params, spec);

  // scores in the oracle's state-major layout (level-1 block is exactly that)
  const std::vector<double> oracle = oracles::flat_policy_gradient(mdp, params.theta);
  REQUIRE(oracle.size() == exact.values.size());
  const double denom = std::max(kernels::max_abs(exact.values), 1e-8);
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    CHECK(std::fabs(exact.values[i] - oracle[i]) / denom < 1e-9);
  }
}

TEST_CASE("finite differences recover the closed-form bandit slope") {
  // single state, two arms: the gain is the softmax mix of the arm rewards
  TabularMdp bandit;
  bandit.n_states = 1;
  bandit.n_actions = 2;
  bandit.transition = {1.0, 1.0};
  bandit.reward = {0.3, 0.9};
  bandit.validate();
  const HierarchySpec spec = make_spec(1, {}, bandit);
  ActorParams params = make_zero_params(spec);
  params.theta = {0.4, -0.2};

  const std::vector<double> pi = oracles::naive_softmax(params.theta);
  const double mean = pi[0] * 0.3 + pi[1] * 0.9;
  const GradientVector fd = finite_difference_gradient(bandit, params, spec, 1e-5);
  CHECK(std::fabs(fd.values[0] - pi[0] * (0.3 - mean)) < 1e-9);
  CHECK(std::fabs(fd.values[1] - pi[1] * (0.9 - mean)) < 1e-9);

  const GradientVector exact = gain_gradient(bandit, params, spec);
  CHECK(rel_error(exact, fd) < 1e-9);
}

TEST_CASE("assembled gradient matches finite differences on random instances") {
  Rng rng(27);
  for (int trial = 0; trial < 6; ++trial) {
    const int depth = 2 + trial % 2;
    const int n_states = 3 + rng.uniform_int(3);
    const int n_actions = 2 + rng.uniform_int(2);
    std::vector<int> options;
    for (int l = 1; l < depth; ++l) options.push_back(2 + rng.uniform_int(2));
    const TabularMdp mdp = random_mdp(rng, n_states, n_actions);
    const HierarchySpec spec = make_spec(depth, options, mdp);
    const ActorParams params = random_params(spec, rng);

    const GradientVector exact = gain_gradient(mdp, params, spec);
    const GradientVector fd = finite_difference_gradient(mdp, params, spec, 1e-5);
    CHECK(rel_error(exact, fd) < 1e-4);
  }
}

TEST_CASE("masked summands touch only their blocks") {
  Rng rng(37);
  const TabularMdp mdp = random_mdp(rng, 4, 2);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const ActorParams params = random_params(spec, rng);

  const GradientVector full = gain_gradient(mdp, params, spec);
  GradientTerms no_action;
  no_action.action_term = false;
  const GradientVector without_action = gain_gradient(mdp, params, spec, no_action);
  GradientTerms no_termination;
  no_termination.termination_term = false;
  const GradientVector without_termination = gain_gradient(mdp, params, spec, no_termination);

  for (std::size_t i = 0; i < full.values.size(); ++i) {
    const std::string block = param_block(spec, static_cast<int>(i));
    // dropping the action-value summand changes only the bottom policy block
    if (block == "pi2") {
      CHECK(without_action.values[i] == 0.0);
    } else {
      CHECK(without_action.values[i] == full.values[i]);
    }
    // dropping the termination summand changes only termination blocks
    if (block == "beta1") {
      CHECK(without_termination.values[i] == 0.0);
    } else {
      CHECK(without_termination.values[i] == full.values[i]);
    }
  }
}

TEST_CASE("gradient is invariant under reward shifts") {
  Rng rng(47);
  const TabularMdp mdp = random_mdp(rng, 4, 2);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const ActorParams params = random_params(spec, rng);
  const GradientVector base = gain_gradient(mdp, params, spec);

  TabularMdp shifted = mdp;
  for (double& r : shifted.reward) r += 11.0;
  const GradientVector moved = gain_gradient(shifted, params, spec);
  CHECK(kernels::max_abs_diff(base.values, moved.values) < 1e-9);
}

TEST_CASE("finite differences report the offending coordinate on multichain probes") {
  TabularMdp mdp;
  mdp.n_states = 4;
  mdp.n_actions = 1;
  mdp.transition = {0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0};
  mdp.reward = {0, 0, 0, 0};
  mdp.validate();
  const HierarchySpec spec = make_spec(1, {}, mdp);
  const ActorParams params = make_zero_params(spec);
  try {
    finite_difference_gradient(mdp, params, spec, 1e-5);
    FAIL("expected a unichain failure");
  } catch (const NotUnichainError& e) {
    CHECK(std::string(e.what()).find("coordinate") != std::string::npos);
  }
}

TEST_CASE("gradcheck report") {
  const GradcheckReport empty = run_gradcheck(0, 7);
  CHECK(empty.pass);
  CHECK(empty.results.empty());

  const GradcheckReport a = run_gradcheck(4, 7);
  const GradcheckReport b = run_gradcheck(4, 7);
  CHECK(gradcheck_to_json(a) == gradcheck_to_json(b));  // seeded determinism
  CHECK(a.pass);
  CHECK(a.max_rel_error < 1e-4);

  const GradcheckReport other_seed = run_gradcheck(4, 8);
  CHECK(gradcheck_to_json(a) != gradcheck_to_json(other_seed));

  CHECK_THROWS_AS(run_gradcheck(-1, 7), std::invalid_argument);
}
