#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avgopt/exact_eval.hpp"
#include "avgopt/kernels.hpp"
#include "avgopt/linalg.hpp"
#include "avgopt/mdp.hpp"
#include "oracles.hpp"

using namespace avgopt;

TEST_CASE("trap chain structure") {
  const TabularMdp mdp = build_trap_chain();
  mdp.validate();
  CHECK(mdp.n_states == 9);
  CHECK(mdp.n_actions == 2);
  CHECK(mdp.labels[kTrapStart] == "S0");

  // the red action at the start enters the red loop
  auto row = mdp.transition_row(kTrapStart, kTrapActionRed);
  CHECK(row[kTrapRedEntry] == doctest::Approx(1.0));
  auto blue_row = mdp.transition_row(kTrapStart, kTrapActionBlue);
  CHECK(blue_row[kTrapBlueEntry] == doctest::Approx(1.0));

  // loop ends offer the same choice again
  CHECK(mdp.transition_row(kTrapRedEntry + 3, kTrapActionBlue)[kTrapBlueEntry] == doctest::Approx(1.0));
  CHECK(mdp.transition_row(kTrapBlueEntry + 3, kTrapActionRed)[kTrapRedEntry] == doctest::Approx(1.0));
  CHECK_FALSE(mdp.has_cycle_events());
}

TEST_CASE("trap chain reproduces the closed-form discounted values") {
  const TabularMdp mdp = build_trap_chain();
  const FlatPolicy red = committed_flat_policy(mdp, kTrapActionRed);
  const FlatPolicy blue = committed_flat_policy(mdp, kTrapActionBlue);
  for (double gamma : {0.3, 0.5, 0.9, 0.99}) {
    const std::vector<double> v_red = discounted_values(mdp, red, gamma);
    const std::vector<double> v_blue = discounted_values(mdp, blue, gamma);
    const double g4 = gamma * gamma * gamma * gamma;
    CHECK(std::fabs(v_red[kTrapRedEntry] - gamma * (2.0 - gamma) / (1.0 - g4)) < 1e-10);
    CHECK(std::fabs(v_blue[kTrapBlueEntry] - 1.0 / (1.0 - g4)) < 1e-10);
    CHECK(v_red[kTrapRedEntry] < v_blue[kTrapBlueEntry]);
  }
  // spot values from the formulas at gamma = 0.5
  const std::vector<double> v_red = discounted_values(mdp, red, 0.5);
  const std::vector<double> v_blue = discounted_values(mdp, blue, 0.5);
  CHECK(v_red[kTrapRedEntry] == doctest::Approx(0.8).epsilon(1e-10));
  CHECK(v_blue[kTrapBlueEntry] == doctest::Approx(1.0 / 0.9375).epsilon(1e-10));
}

TEST_CASE("committed blue loop has average reward 1/4") {
  const TabularMdp mdp = build_trap_chain();
  const FlatPolicy blue = committed_flat_policy(mdp, kTrapActionBlue);
  const oracles::RviResult solution = oracles::relative_value_iteration(mdp, blue);
  CHECK(solution.gain == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("delivery grid rewards and flags") {
  DeliveryGridSpec spec;
  const TabularMdp mdp = build_delivery_grid(spec);
  mdp.validate();
  CHECK(mdp.n_states == spec.width * spec.height * 3 * 2);
  CHECK(mdp.has_cycle_events());

  // entering the drop-off while carrying the better parcel pays 100 and
  // resets the carry flag
  const GridCell north_of_dropoff{spec.dropoff.x, spec.dropoff.y + 1};
  const int carrying = delivery_state_index(spec, north_of_dropoff, kCarryFromP2, true);
  const int south = 2;
  CHECK(mdp.reward_at(carrying, south) == doctest::Approx(100.0));
  CHECK(mdp.cycle_tag_at(carrying, south) == kRouteP2);
  const int after = delivery_state_index(spec, spec.dropoff, kCarryEmpty, false);
  CHECK(mdp.transition_row(carrying, south)[after] == doctest::Approx(1.0));

  // the P1 parcel pays 50
  const int carrying_p1 = delivery_state_index(spec, north_of_dropoff, kCarryFromP1, true);
  CHECK(mdp.reward_at(carrying_p1, south) == doctest::Approx(50.0));
  CHECK(mdp.cycle_tag_at(carrying_p1, south) == kRouteP1);

  // first crossing of the trap junction pays 20 and latches
  const GridCell west_of_trap{spec.junction_trap.x - 1, spec.junction_trap.y};
  const int east = 1;
  const int approaching = delivery_state_index(spec, west_of_trap, kCarryEmpty, false);
  CHECK(mdp.reward_at(approaching, east) == doctest::Approx(20.0));
  const int latched = delivery_state_index(spec, spec.junction_trap, kCarryEmpty, true);
  CHECK(mdp.transition_row(approaching, east)[latched] == doctest::Approx(1.0));

  // once latched the junction pays nothing until the next delivery
  const int approaching_latched = delivery_state_index(spec, west_of_trap, kCarryEmpty, true);
  CHECK(mdp.reward_at(approaching_latched, east) == doctest::Approx(0.0));

  // the alternative junction pays 10
  const GridCell west_of_alt{spec.junction_alt.x - 1, spec.junction_alt.y};
  const int near_alt = delivery_state_index(spec, west_of_alt, kCarryEmpty, false);
  CHECK(mdp.reward_at(near_alt, east) == doctest::Approx(10.0));

  // moving between two plain cells pays the step reward
  const int plain = delivery_state_index(spec, GridCell{0, 0}, kCarryEmpty, false);
  const int north = 0;
  CHECK(mdp.reward_at(plain, north) == doctest::Approx(0.0));

  // bumping into the boundary stays put
  CHECK(mdp.transition_row(plain, south)[plain] == doctest::Approx(1.0));

  // entering a pickup while empty starts carrying
  const GridCell south_of_p1{spec.pickup_p1.x, spec.pickup_p1.y - 1};
  const int below = delivery_state_index(spec, south_of_p1, kCarryEmpty, false);
  const int picked = delivery_state_index(spec, spec.pickup_p1, kCarryFromP1, false);
  CHECK(mdp.transition_row(below, north)[picked] == doctest::Approx(1.0));
}

TEST_CASE("delivery grid is unichain under the uniform random policy") {
  const TabularMdp mdp = build_delivery_grid();
  const FlatPolicy uniform = uniform_flat_policy(mdp);
  const DenseMatrix chain = oracles::flat_chain(mdp, uniform);
  const std::vector<double> d = stationary_vector(chain);  // throws if not unichain
  std::vector<double> dp(d.size());
  avgopt::kernels::vecmat(d.data(), chain.data.data(), chain.rows, chain.cols, dp.data());
  CHECK(avgopt::kernels::max_abs_diff(dp, d) < 1e-10);
}

TEST_CASE("invalid grid specs are rejected") {
  DeliveryGridSpec bad;
  bad.pickup_p1 = bad.pickup_p2;
  CHECK_THROWS_AS(build_delivery_grid(bad), std::invalid_argument);

  DeliveryGridSpec out_of_bounds;
  out_of_bounds.dropoff = {99, 0};
  CHECK_THROWS_AS(build_delivery_grid(out_of_bounds), std::invalid_argument);

  DeliveryGridSpec walled;
  walled.walls.push_back(walled.pickup_p1);
  CHECK_THROWS_AS(build_delivery_grid(walled), std::invalid_argument);
}

TEST_CASE("sampling follows the transition rows") {
  const TabularMdp trap = build_trap_chain();
  Rng rng(7);
  // deterministic row
  for (int i = 0; i < 10; ++i) {
    const Transition t = sample_step(trap, kTrapStart, kTrapActionRed, rng);
    CHECK(t.next_state == kTrapRedEntry);
    CHECK(t.reward == 0.0);
  }

  // uniform row over two successors
  TabularMdp coin;
  coin.n_states = 2;
  coin.n_actions = 1;
  coin.transition = {0.5, 0.5, 0.5, 0.5};
  coin.reward = {0.0, 0.0};
  coin.validate();
  const int n = 1000000;
  int heads = 0;
  for (int i = 0; i < n; ++i) heads += sample_step(coin, 0, 0, rng).next_state;
  const double freq = static_cast<double>(heads) / n;
  CHECK(std::fabs(freq - 0.5) < oracles::binomial_3sigma(0.5, n));

  CHECK_THROWS_AS(sample_step(trap, -1, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_step(trap, 0, 5, rng), std::invalid_argument);
}

TEST_CASE("json round trip preserves every table") {
  const TabularMdp grid = build_delivery_grid();
  const TabularMdp back = mdp_from_json(mdp_to_json(grid));
  CHECK(back.n_states == grid.n_states);
  CHECK(back.n_actions == grid.n_actions);
  CHECK(back.transition == grid.transition);  // bit-exact
  CHECK(back.reward == grid.reward);
  CHECK(back.labels == grid.labels);
  CHECK(back.cycle_tag == grid.cycle_tag);
}

TEST_CASE("malformed mdp json is rejected") {
  CHECK_THROWS(mdp_from_json("{"));
  CHECK_THROWS_AS(mdp_from_json(R"({"n_states":1,"n_actions":1,"transitions":[[0.5]],"rewards":[[0]]})"),
                  std::invalid_argument);
}
