#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avgopt/exact_eval.hpp"
#include "avgopt/learner.hpp"
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

TabularMdp two_armed_bandit(double reward_good, double reward_bad) {
  TabularMdp bandit;
  bandit.n_states = 1;
  bandit.n_actions = 2;
  bandit.transition = {1.0, 1.0};
  bandit.reward = {reward_good, reward_bad};
  bandit.validate();
  return bandit;
}

}  // namespace

TEST_CASE("step schedules enforce the two-timescale conditions") {
  StepSchedule good;
  good.validate();
  CHECK(good.actor_rate(0) == doctest::Approx(0.01));
  CHECK(good.critic_rate(3) == doctest::Approx(0.05 * std::pow(4.0, -0.6)));

  StepSchedule slow_critic;
  slow_critic.critic_decay = 0.5;  // square sum diverges
  CHECK_THROWS_AS(slow_critic.validate(), std::invalid_argument);

  StepSchedule inverted;
  inverted.actor_decay = 0.55;
  inverted.critic_decay = 0.6;  // actor must be slower
  CHECK_THROWS_AS(inverted.validate(), std::invalid_argument);

  StepSchedule stalled;
  stalled.actor_decay = 1.2;  // step sum must diverge
  CHECK_THROWS_AS(stalled.validate(), std::invalid_argument);

  StepSchedule negative;
  negative.critic_scale = 0.0;
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);

  StepSchedule bad_cap;
  bad_cap.critic_cap = 0.0;
  CHECK_THROWS_AS(bad_cap.validate(), std::invalid_argument);

  // a rate cap turns the power law into burn-in followed by the same decay
  StepSchedule capped;
  capped.critic_scale = 1000.0;
  capped.critic_cap = 0.25;
  capped.validate();
  CHECK(capped.critic_rate(0) == doctest::Approx(0.25));
  CHECK(capped.critic_rate(100000000) < 0.25);
}

TEST_CASE("td error closed forms") {
  const TabularMdp mdp = two_armed_bandit(1.0, 0.0);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const ActorParams params = make_zero_params(spec);
  const FeatureMap features;
  CriticState critic = make_zero_critic(spec, features);

  Transition step;
  step.state = 0;
  step.action = 0;
  step.reward = 1.0;
  step.next_state = 0;
  const OptionStack stack = OptionStack::root(spec);

  // all estimates zero: the error is the reward itself
  CHECK(td_error(step, stack, critic, params, spec, features, RewardMode::average_reward, 0.0) ==
        doctest::Approx(1.0));

  // converged on a constant reward: zero error
  critic.gain_estimate = 1.0;
  CHECK(td_error(step, stack, critic, params, spec, features, RewardMode::average_reward, 0.0) ==
        doctest::Approx(0.0));
}

TEST_CASE("td error has zero mean under the exact critic") {
  Rng rng(19);
  const TabularMdp mdp = random_mdp(rng, 3, 2);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  ActorParams params = make_zero_params(spec);
  for (double& w : params.theta) w = rng.uniform(-0.5, 0.5);
  const FeatureMap features;

  const auto [tables, advantage] = solve_values(mdp, params, spec);
  CriticState critic = make_zero_critic(spec, features);
  critic.gain_estimate = tables.gain;
  for (int level = 0; level < spec.depth; ++level) critic.weights[level] = tables.option_value[level];

  OptionStack stack = OptionStack::root(spec);
  int state = 0;
  const int n = 100000;
  double mean = 0.0;
  double second = 0.0;
  for (int i = 0; i < n; ++i) {
    const int action = rng.categorical(policy_probs(params, spec, spec.depth, state, stack));
    const Transition step = sample_step(mdp, state, action, rng);
    const double delta =
        td_error(step, stack, critic, params, spec, features, RewardMode::average_reward, 0.0);
    mean += delta;
    second += delta * delta;
    const ArrivalSample arrival = sample_arrival(params, spec, step.next_state, stack, rng);
    state = step.next_state;
    stack = arrival.stack;
  }
  mean /= n;
  second /= n;
  const double sd = std::sqrt(std::max(second - mean * mean, 1e-12));
  // effective sample count deflated for the chain's autocorrelation
  CHECK(std::fabs(mean) < 3.0 * sd / std::sqrt(n / 10.0));
}

TEST_CASE("critic step updates") {
  const TabularMdp mdp = two_armed_bandit(0.6, 0.6);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const ActorParams params = make_zero_params(spec);
  const FeatureMap features;
  const StepSchedule schedule;

  // converged critic on a constant reward: no weight moves
  CriticState critic = make_zero_critic(spec, features);
  critic.gain_estimate = 0.6;
  const CriticState before = critic;
  Transition step;
  step.state = 0;
  step.action = 0;
  step.reward = 0.6;
  step.next_state = 0;
  critic_step(critic, step, OptionStack::root(spec), params, spec, features, schedule, 0,
              RewardMode::average_reward, 0.0);
  CHECK(critic.weights == before.weights);
  CHECK(critic.gain_estimate == doctest::Approx(0.6));

  // constant rewards pull the gain estimate onto the constant
  LearnerConfig config;
  config.total_steps = 100000;
  config.seed = 5;
  config.freeze_actor = true;
  RunRecord record = train(mdp, spec, config);
  CHECK(std::fabs(record.final_critic.gain_estimate - 0.6) < 1e-3);
}

TEST_CASE("frozen-policy critic approaches the exact differential values") {
  Rng rng(29);
  const TabularMdp mdp = random_mdp(rng, 3, 2);
  const HierarchySpec spec = make_spec(1, {}, mdp);
  const ActorParams params = make_zero_params(spec);  // uniform flat policy
  const FeatureMap features;

  LearnerConfig config;
  config.total_steps = 200000;
  config.seed = 11;
  config.freeze_actor = true;
  config.schedule.critic_decay = 0.7;
  const RunRecord record = train(mdp, spec, config);

  const auto [tables, advantage] = solve_values(mdp, params, spec);
  CHECK(std::fabs(record.final_critic.gain_estimate - tables.gain) < 1e-2);

  // compare centered tables under the stationary weighting
  const AugmentedKernel kernel = one_step_kernel(mdp, params, spec);
  const StationaryDistribution dist = stationary_distribution(kernel);
  double mean_estimate = 0.0;
  for (int s = 0; s < 3; ++s) mean_estimate += dist.d[s] * record.final_critic.weights[0][s];
  for (int s = 0; s < 3; ++s) {
    const double centered = record.final_critic.weights[0][s] - mean_estimate;
    CHECK(std::fabs(centered - tables.option_value[0][s]) < 5e-2);
  }
}

TEST_CASE("actor step projection and null updates") {
  const TabularMdp mdp = two_armed_bandit(0.0, 0.0);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const FeatureMap features;
  const StepSchedule schedule;
  const CriticState critic = make_zero_critic(spec, features);
  Transition step;
  step.state = 0;
  step.action = 1;
  step.reward = 0.0;
  step.next_state = 0;
  const OptionStack stack = OptionStack::root(spec);

  // zero critic, zero gain estimate, zero reward: parameters stay put
  ActorParams params = make_zero_params(spec);
  actor_step(params, critic, spec, features, step, stack, stack, schedule, 0,
             RewardMode::average_reward, 0.0);
  for (double w : params.theta) CHECK(w == 0.0);

  // a coordinate at the bound stays exactly at the bound
  ActorParams pinned = make_zero_params(spec);
  const int idx = policy_param_index(spec, spec.depth, 0, 0, 1);
  pinned.theta[idx] = pinned.bound;
  CriticState rich = make_zero_critic(spec, features);
  rich.gain_estimate = -10.0;  // makes the sampled action value strongly positive
  actor_step(pinned, rich, spec, features, step, stack, stack, schedule, 0,
             RewardMode::average_reward, 0.0);
  CHECK(pinned.theta[idx] == pinned.bound);

  // the dense direction equals the sparse entries
  Rng rng(3);
  ActorParams random = make_zero_params(spec);
  for (double& w : random.theta) w = rng.uniform(-1.0, 1.0);
  CriticState critic2 = make_zero_critic(spec, features);
  for (auto& level : critic2.weights) {
    for (double& w : level) w = rng.uniform(-1.0, 1.0);
  }
  const std::vector<double> dense = update_direction(random, critic2, spec, features, step, stack, stack,
                                                     RewardMode::average_reward, 0.0);
  double norm = 0.0;
  for (double v : dense) norm += std::fabs(v);
  CHECK(norm > 0.0);
}

TEST_CASE("two-armed bandit learns the better arm") {
  const TabularMdp bandit = two_armed_bandit(1.0, 0.0);
  const HierarchySpec spec = make_spec(2, {2}, bandit);

  LearnerConfig config;
  config.total_steps = 50000;
  config.schedule.actor_scale = 0.5;
  config.schedule.actor_decay = 0.6;
  config.schedule.critic_scale = 0.5;
  config.schedule.gain_scale = 0.5;
  config.schedule.critic_decay = 0.51;

  const double initial_gain = exact_gain(bandit, make_zero_params(spec), spec);
  CHECK(initial_gain == doctest::Approx(0.5));

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    config.seed = seed;
    const RunRecord record = train(bandit, spec, config);
    REQUIRE_FALSE(record.diverged);
    // marginal probability of the better arm under the learned hierarchy
    const OptionStack root = OptionStack::root(spec);
    const std::vector<double> over_options = policy_probs(record.final_params, spec, 1, 0, root);
    double p_good = 0.0;
    for (int o = 0; o < 2; ++o) {
      OptionStack stack = root;
      stack.ids[1] = o;
      p_good += over_options[o] * policy_probs(record.final_params, spec, 2, 0, stack)[0];
    }
    CHECK(p_good > 0.9);
    CHECK(exact_gain(bandit, record.final_params, spec) > initial_gain);
  }
}

TEST_CASE("training loop basics") {
  const TabularMdp mdp = build_trap_chain();
  const HierarchySpec spec = make_spec(2, {2}, mdp);

  LearnerConfig empty;
  empty.total_steps = 0;
  empty.seed = 9;
  const RunRecord zero_run = train(mdp, spec, empty);
  CHECK(zero_run.cycles.empty());
  CHECK(zero_run.windows.empty());
  CHECK(zero_run.traces.empty());
  for (double w : zero_run.final_params.theta) CHECK(w == 0.0);

  LearnerConfig config;
  config.total_steps = 20000;
  config.seed = 9;
  const RunRecord a = train(mdp, spec, config);
  const RunRecord b = train(mdp, spec, config);
  CHECK(a.windows == b.windows);
  CHECK(a.traces == b.traces);
  CHECK(a.final_params.theta == b.final_params.theta);
  CHECK(a.final_critic == b.final_critic);
  CHECK_FALSE(a.diverged);

  LearnerConfig other_seed = config;
  other_seed.seed = 10;
  const RunRecord c = train(mdp, spec, other_seed);
  CHECK(a.final_params.theta != c.final_params.theta);

  // the trap chain has no drop-off events: reporting falls back to windows
  CHECK_FALSE(a.cyclic_env);
  CHECK(a.cycles.empty());
  CHECK(a.windows.size() == 20);
}

TEST_CASE("actor weights stay inside the projection box") {
  const TabularMdp bandit = two_armed_bandit(5.0, -5.0);
  const HierarchySpec spec = make_spec(2, {2}, bandit);
  LearnerConfig config;
  config.total_steps = 5000;
  config.seed = 13;
  config.projection_bound = 0.05;
  config.schedule.actor_scale = 1.0;
  config.schedule.actor_decay = 0.6;
  config.schedule.critic_decay = 0.51;
  const RunRecord record = train(bandit, spec, config);
  for (double w : record.final_params.theta) {
    CHECK(w <= 0.05);
    CHECK(w >= -0.05);
  }
  // traced actor coordinates respected the box at every recorded step
  const FeatureMap features;
  for (const TracePoint& point : record.traces) {
    if (point.param_id < param_count(spec)) {
      CHECK(std::fabs(point.value) <= 0.05 + 1e-15);
    }
  }
}

TEST_CASE("discounted and average-reward errors coincide at gamma one with a pinned gain") {
  Rng rng(43);
  const TabularMdp mdp = random_mdp(rng, 3, 2);
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const FeatureMap features;
  for (int trial = 0; trial < 50; ++trial) {
    ActorParams params = make_zero_params(spec);
    for (double& w : params.theta) w = rng.uniform(-1.0, 1.0);
    CriticState critic = make_zero_critic(spec, features);
    for (auto& level : critic.weights) {
      for (double& w : level) w = rng.uniform(-1.0, 1.0);
    }
    critic.gain_estimate = 0.0;  // pinned
    Transition step;
    step.state = rng.uniform_int(3);
    step.action = rng.uniform_int(2);
    step.reward = rng.uniform(-1.0, 1.0);
    step.next_state = rng.uniform_int(3);
    const OptionStack stack = stack_from_id(spec, rng.uniform_int(spec.stack_count()));
    const double ar = td_error(step, stack, critic, params, spec, features, RewardMode::average_reward, 0.0);
    const double dr = td_error(step, stack, critic, params, spec, features, RewardMode::discounted, 1.0);
    CHECK(ar == dr);
  }
}

TEST_CASE("learner config validation") {
  const TabularMdp mdp = build_trap_chain();
  const HierarchySpec spec = make_spec(2, {2}, mdp);

  LearnerConfig discounted;
  discounted.mode = RewardMode::discounted;
  CHECK_THROWS_AS(discounted.validate(spec, mdp), std::invalid_argument);  // gamma missing
  discounted.gamma = 1.0;
  CHECK_THROWS_AS(discounted.validate(spec, mdp), std::invalid_argument);  // gamma out of range
  discounted.gamma = 0.9;
  discounted.validate(spec, mdp);

  LearnerConfig average;
  average.gamma = 0.9;  // forbidden in average-reward mode
  CHECK_THROWS_AS(average.validate(spec, mdp), std::invalid_argument);

  LearnerConfig bad_state;
  bad_state.start_state = 99;
  CHECK_THROWS_AS(bad_state.validate(spec, mdp), std::invalid_argument);

  LearnerConfig bad_trace;
  bad_trace.trace_param_ids = {99999};
  CHECK_THROWS_AS(train(mdp, spec, bad_trace), std::invalid_argument);
}

TEST_CASE("divergence guard aborts with diagnostics") {
  const TabularMdp hot = two_armed_bandit(1e300, 1e300);
  const HierarchySpec spec = make_spec(2, {2}, hot);
  LearnerConfig config;
  config.total_steps = 1000;
  config.seed = 3;
  config.schedule.actor_scale = 1e9;
  config.schedule.critic_scale = 1e9;
  config.schedule.gain_scale = 1e9;
  config.schedule.actor_decay = 0.6;
  config.schedule.critic_decay = 0.51;
  const RunRecord record = train(hot, spec, config);
  CHECK(record.diverged);
  CHECK(record.steps_completed < 1000);
  CHECK_FALSE(record.divergence_message.empty());
}

TEST_CASE("discounted mode never updates the gain estimate") {
  const TabularMdp mdp = build_trap_chain();
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  LearnerConfig config;
  config.mode = RewardMode::discounted;
  config.gamma = 0.9;
  config.total_steps = 20000;
  config.seed = 4;
  const RunRecord record = train(mdp, spec, config);
  CHECK_FALSE(record.diverged);
  CHECK(record.final_critic.gain_estimate == 0.0);
  for (const WindowPoint& w : record.windows) CHECK(w.gain_estimate == 0.0);
}

TEST_CASE("gain estimate tracks the exact gain on the trap chain") {
  const TabularMdp mdp = build_trap_chain();
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  LearnerConfig config;
  config.total_steps = 200000;
  config.seed = 21;
  config.schedule.critic_decay = 0.7;
  config.schedule.actor_decay = 0.95;
  config.schedule.gain_scale = 0.1;
  const RunRecord record = train(mdp, spec, config);
  REQUIRE_FALSE(record.diverged);
  const double exact = exact_gain(mdp, record.final_params, spec);
  CHECK(std::fabs(record.final_critic.gain_estimate - exact) < 1e-2);
}

TEST_CASE("default traces cover the three families") {
  const TabularMdp mdp = build_trap_chain();
  const HierarchySpec spec = make_spec(2, {2}, mdp);
  const FeatureMap features;
  const std::vector<int> ids = default_trace_ids(spec, features, 7);
  REQUIRE(ids.size() == 3);
  CHECK(trace_id_name(spec, features, ids[0]).substr(0, 4) == "qhat");
  CHECK(trace_id_name(spec, features, ids[1]).substr(0, 3) == "pi2");
  CHECK(trace_id_name(spec, features, ids[2]).substr(0, 3) == "pi1");

  // a flat hierarchy has no option-policy family
  const HierarchySpec flat = make_spec(1, {}, mdp);
  CHECK(default_trace_ids(flat, features, 7).size() == 2);
}
