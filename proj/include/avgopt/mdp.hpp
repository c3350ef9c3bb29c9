#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "avgopt/rng.hpp"

namespace avgopt {

/// Finite MDP with dense transition and reward tables. Immutable after
/// construction; all sampling takes an explicit random stream, so
/// concurrent runs that own their streams can share one instance.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  /// transition[(s * n_actions + a) * n_states + s'] = P(s'|s,a)
  std::vector<double> transition;
  /// reward[s * n_actions + a] = r(s,a)
  std::vector<double> reward;
  /// Optional state names for reports (empty or n_states entries).
  std::vector<std::string> labels;
  /// Optional per-(s,a) cycle markers: 0 = none, >0 identifies the route
  /// that completes a cycle on this transition (drop-off events).
  std::vector<std::uint8_t> cycle_tag;

  std::span<const double> transition_row(int s, int a) const {
    return {transition.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states,
            static_cast<std::size_t>(n_states)};
  }
  double reward_at(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
  std::uint8_t cycle_tag_at(int s, int a) const {
    return cycle_tag.empty() ? std::uint8_t{0} : cycle_tag[static_cast<std::size_t>(s) * n_actions + a];
  }
  bool has_cycle_events() const;
  const std::string& label(int s) const;

  /// Checks row stochasticity (1e-12), finite rewards and positive sizes;
  /// throws std::invalid_argument with a description on failure.
  void validate() const;
};

/// One sampled environment step.
struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool cycle_completed = false;
  std::uint8_t route = 0;
};

Transition sample_step(const TabularMdp& mdp, int state, int action, Rng& rng);

// ---------------------------------------------------------------------------
// Two-loop chain with a start choice. Committing to the first loop yields
// discounted entry value g(2-g)/(1-g^4) and committing to the second yields
// 1/(1-g^4); both loops have average reward 1/4. The loop-end states offer
// the same red/blue choice as the start, so soft policies keep the chain
// unichain while committed policies make the other loop transient.
// ---------------------------------------------------------------------------

struct TrapChainSpec {
  std::vector<double> discount_probe_set{0.3, 0.5, 0.9, 0.99};
  /// Reward on the k-th edge of each loop, k = 0 at the entry state.
  std::array<double, 4> red_loop_rewards{0.0, 2.0, -1.0, 0.0};
  std::array<double, 4> blue_loop_rewards{1.0, 0.0, 0.0, 0.0};
};

/// States: 0 = S0, 1..4 = S11..S14 (red loop), 5..8 = S21..S24 (blue loop).
/// Actions: 0 = red, 1 = blue (identical except at S0, S14, S24).
TabularMdp build_trap_chain(const TrapChainSpec& spec = {});

inline constexpr int kTrapStart = 0;
inline constexpr int kTrapRedEntry = 1;
inline constexpr int kTrapBlueEntry = 5;
inline constexpr int kTrapActionRed = 0;
inline constexpr int kTrapActionBlue = 1;

// ---------------------------------------------------------------------------
// Delivery grid-world: pick a parcel at P1 or P2, drop it at the drop-off
// cell, repeat forever. The drop-off reward depends on where the parcel was
// picked up. Each route passes a junction cell that pays a small reward the
// first time it is crossed within a delivery cycle.
// ---------------------------------------------------------------------------

struct GridCell {
  int x = 0;
  int y = 0;
  bool operator==(const GridCell&) const = default;
};

struct DeliveryGridSpec {
  int width = 10;
  int height = 10;
  std::vector<GridCell> walls;
  GridCell pickup_p1{1, 8};
  GridCell pickup_p2{8, 8};
  GridCell dropoff{4, 0};
  /// Junction on the P1 route (blue-green) and its reward.
  GridCell junction_trap{3, 4};
  double junction_trap_reward = 20.0;
  /// Junction on the P2 route (red-green) and its reward.
  GridCell junction_alt{6, 4};
  double junction_alt_reward = 10.0;
  double parcel_reward_p1 = 50.0;
  double parcel_reward_p2 = 100.0;
  double step_reward = 0.0;
  /// When true (default) a junction pays at most once per delivery cycle;
  /// the collected flag is part of the state and clears on drop-off.
  /// Without the latch the gain-optimal policy is to shuttle in and out of
  /// the trap junction (reward/2 per step) instead of delivering.
  bool junction_once_per_cycle = true;

  void validate() const;
};

/// Compiled state = (cell, carry flag, junction-collected flag); actions are
/// N/E/S/W with bump-into-wall = stay. Deterministic transitions.
TabularMdp build_delivery_grid(const DeliveryGridSpec& spec = {});

inline constexpr int kCarryEmpty = 0;
inline constexpr int kCarryFromP1 = 1;
inline constexpr int kCarryFromP2 = 2;
inline constexpr std::uint8_t kRouteP1 = 1;
inline constexpr std::uint8_t kRouteP2 = 2;

/// State index helpers for the compiled delivery grid.
int delivery_state_index(const DeliveryGridSpec& spec, GridCell cell, int carry, bool junction_collected);

// ---------------------------------------------------------------------------
// JSON import/export:
//   {n_states, n_actions, transitions: [[row-major probs]], rewards: [[...]],
//    labels, cycle_tags}
// transitions has one row per (state, action) pair in state-major order.
// ---------------------------------------------------------------------------

std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);

}  // namespace avgopt
