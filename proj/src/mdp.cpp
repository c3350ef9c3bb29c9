#include "avgopt/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace avgopt {

namespace {

void set_deterministic(TabularMdp& mdp, int s, int a, int next, double r, std::uint8_t tag = 0) {
  const std::size_t row = (static_cast<std::size_t>(s) * mdp.n_actions + a) * mdp.n_states;
  mdp.transition[row + next] = 1.0;
  mdp.reward[static_cast<std::size_t>(s) * mdp.n_actions + a] = r;
  if (tag != 0) mdp.cycle_tag[static_cast<std::size_t>(s) * mdp.n_actions + a] = tag;
}

TabularMdp make_empty(int n_states, int n_actions) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.transition.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  mdp.reward.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
  mdp.cycle_tag.assign(static_cast<std::size_t>(n_states) * n_actions, 0);
  return mdp;
}

}  // namespace

bool TabularMdp::has_cycle_events() const {
  return std::any_of(cycle_tag.begin(), cycle_tag.end(), [](std::uint8_t t) { return t != 0; });
}

const std::string& TabularMdp::label(int s) const {
  static const std::string empty;
  if (s < 0 || s >= static_cast<int>(labels.size())) return empty;
  return labels[s];
}

void TabularMdp::validate() const {
  if (n_states < 1 || n_actions < 1) throw std::invalid_argument("mdp: n_states and n_actions must be >= 1");
  if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states) {
    throw std::invalid_argument("mdp: transition table has wrong size");
  }
  if (reward.size() != static_cast<std::size_t>(n_states) * n_actions) {
    throw std::invalid_argument("mdp: reward table has wrong size");
  }
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(n_states)) {
    throw std::invalid_argument("mdp: labels must be empty or one per state");
  }
  if (!cycle_tag.empty() && cycle_tag.size() != static_cast<std::size_t>(n_states) * n_actions) {
    throw std::invalid_argument("mdp: cycle tags must be empty or one per (state, action)");
  }
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (double p : transition_row(s, a)) {
        if (p < 0.0 || !std::isfinite(p)) {
          throw std::invalid_argument("mdp: transition probabilities must be finite and non-negative");
        }
        total += p;
      }
      if (std::fabs(total - 1.0) > 1e-12) {
        throw std::invalid_argument("mdp: transition row (" + std::to_string(s) + "," + std::to_string(a) +
                                    ") sums to " + std::to_string(total));
      }
      if (!std::isfinite(reward_at(s, a))) throw std::invalid_argument("mdp: rewards must be finite");
    }
  }
}

Transition sample_step(const TabularMdp& mdp, int state, int action, Rng& rng) {
  if (state < 0 || state >= mdp.n_states) throw std::invalid_argument("sample_step: invalid state id");
  if (action < 0 || action >= mdp.n_actions) throw std::invalid_argument("sample_step: invalid action id");
  Transition t;
  t.state = state;
  t.action = action;
  t.reward = mdp.reward_at(state, action);
  t.next_state = rng.categorical(mdp.transition_row(state, action));
  t.route = mdp.cycle_tag_at(state, action);
  t.cycle_completed = t.route != 0;
  return t;
}

TabularMdp build_trap_chain(const TrapChainSpec& spec) {
  // 0 = S0, 1..4 = red loop, 5..8 = blue loop.
  TabularMdp mdp = make_empty(9, 2);
  mdp.labels = {"S0", "S11", "S12", "S13", "S14", "S21", "S22", "S23", "S24"};

  auto wire_choice = [&](int s) {
    set_deterministic(mdp, s, kTrapActionRed, kTrapRedEntry, 0.0);
    set_deterministic(mdp, s, kTrapActionBlue, kTrapBlueEntry, 0.0);
  };
  wire_choice(kTrapStart);

  // Loop interiors: one effective action (both ids behave identically).
  for (int k = 0; k < 3; ++k) {
    for (int a = 0; a < 2; ++a) {
      set_deterministic(mdp, kTrapRedEntry + k, a, kTrapRedEntry + k + 1, spec.red_loop_rewards[k]);
      set_deterministic(mdp, kTrapBlueEntry + k, a, kTrapBlueEntry + k + 1, spec.blue_loop_rewards[k]);
    }
  }
  // Loop ends re-enter through the same choice as S0.
  wire_choice(kTrapRedEntry + 3);
  wire_choice(kTrapBlueEntry + 3);
  for (int a = 0; a < 2; ++a) {
    mdp.reward[static_cast<std::size_t>(kTrapRedEntry + 3) * 2 + a] = spec.red_loop_rewards[3];
    mdp.reward[static_cast<std::size_t>(kTrapBlueEntry + 3) * 2 + a] = spec.blue_loop_rewards[3];
  }

  mdp.validate();
  return mdp;
}

void DeliveryGridSpec::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("grid: width and height must be positive");
  auto in_bounds = [&](GridCell c) { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; };
  auto is_wall = [&](GridCell c) { return std::find(walls.begin(), walls.end(), c) != walls.end(); };
  for (GridCell c : {pickup_p1, pickup_p2, dropoff, junction_trap, junction_alt}) {
    if (!in_bounds(c)) throw std::invalid_argument("grid: special cell out of bounds");
    if (is_wall(c)) throw std::invalid_argument("grid: special cell coincides with a wall");
  }
  if (pickup_p1 == pickup_p2 || pickup_p1 == dropoff || pickup_p2 == dropoff) {
    throw std::invalid_argument("grid: pickup and drop-off cells must be distinct");
  }
  for (GridCell w : walls) {
    if (!in_bounds(w)) throw std::invalid_argument("grid: wall out of bounds");
  }
}

int delivery_state_index(const DeliveryGridSpec& spec, GridCell cell, int carry, bool junction_collected) {
  const int n_cells = spec.width * spec.height;
  const int cell_id = cell.y * spec.width + cell.x;
  const int latch = spec.junction_once_per_cycle && junction_collected ? 1 : 0;
  return (latch * 3 + carry) * n_cells + cell_id;
}

TabularMdp build_delivery_grid(const DeliveryGridSpec& spec) {
  spec.validate();
  const int n_cells = spec.width * spec.height;
  const int latch_states = spec.junction_once_per_cycle ? 2 : 1;
  const int n_states = n_cells * 3 * latch_states;
  TabularMdp mdp = make_empty(n_states, 4);

  auto is_wall = [&](GridCell c) {
    return std::find(spec.walls.begin(), spec.walls.end(), c) != spec.walls.end();
  };
  auto in_bounds = [&](GridCell c) { return c.x >= 0 && c.x < spec.width && c.y >= 0 && c.y < spec.height; };

  const char* carry_names[] = {"empty", "p1", "p2"};
  mdp.labels.resize(n_states);

  // Actions: 0 = north (+y), 1 = east (+x), 2 = south (-y), 3 = west (-x).
  const int dx[] = {0, 1, 0, -1};
  const int dy[] = {1, 0, -1, 0};

  for (int latch = 0; latch < latch_states; ++latch) {
    for (int carry = 0; carry < 3; ++carry) {
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          const GridCell cell{x, y};
          if (is_wall(cell)) {
            // Wall cells are unreachable; route them into the main class so
            // they stay transient rather than forming their own closed class.
            const int s = delivery_state_index(spec, cell, carry, latch != 0);
            const int exit = delivery_state_index(spec, spec.dropoff, carry, latch != 0);
            mdp.labels[s] = "wall";
            for (int a = 0; a < 4; ++a) set_deterministic(mdp, s, a, exit, 0.0);
            continue;
          }
          const int s = delivery_state_index(spec, cell, carry, latch != 0);
          mdp.labels[s] = "x" + std::to_string(x) + "y" + std::to_string(y) + ":" + carry_names[carry] +
                          (latch_states == 2 ? (latch ? ":j1" : ":j0") : "");
          for (int a = 0; a < 4; ++a) {
            GridCell next{x + dx[a], y + dy[a]};
            if (!in_bounds(next) || is_wall(next)) next = cell;

            double r = spec.step_reward;
            int next_carry = carry;
            int next_latch = latch;
            std::uint8_t tag = 0;

            const bool entering = !(next == cell);
            if (entering && next == spec.dropoff && carry != kCarryEmpty) {
              r += carry == kCarryFromP2 ? spec.parcel_reward_p2 : spec.parcel_reward_p1;
              tag = carry == kCarryFromP2 ? kRouteP2 : kRouteP1;
              next_carry = kCarryEmpty;
              next_latch = 0;  // junction becomes collectable again next cycle
            } else if (entering && next == spec.pickup_p1 && carry == kCarryEmpty) {
              next_carry = kCarryFromP1;
            } else if (entering && next == spec.pickup_p2 && carry == kCarryEmpty) {
              next_carry = kCarryFromP2;
            }
            if (entering && (next == spec.junction_trap || next == spec.junction_alt)) {
              const bool collectable = !spec.junction_once_per_cycle || latch == 0;
              if (collectable) {
                r += next == spec.junction_trap ? spec.junction_trap_reward : spec.junction_alt_reward;
                if (spec.junction_once_per_cycle) next_latch = 1;
              }
            }
            const int ns = delivery_state_index(spec, next, next_carry, next_latch != 0);
            set_deterministic(mdp, s, a, ns, r, tag);
          }
        }
      }
    }
  }

  mdp.validate();
  return mdp;
}

std::string mdp_to_json(const TabularMdp& mdp) {
  nlohmann::json j;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  auto rows = nlohmann::json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      auto row = mdp.transition_row(s, a);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
  }
  j["transitions"] = std::move(rows);
  auto rewards = nlohmann::json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    std::vector<double> row(mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) row[a] = mdp.reward_at(s, a);
    rewards.push_back(std::move(row));
  }
  j["rewards"] = std::move(rewards);
  if (!mdp.labels.empty()) j["labels"] = mdp.labels;
  if (mdp.has_cycle_events()) {
    auto tags = nlohmann::json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
      std::vector<int> row(mdp.n_actions);
      for (int a = 0; a < mdp.n_actions; ++a) row[a] = mdp.cycle_tag_at(s, a);
      tags.push_back(std::move(row));
    }
    j["cycle_tags"] = std::move(tags);
  }
  return j.dump(2);
}

TabularMdp mdp_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TabularMdp mdp;
  mdp.n_states = j.at("n_states").get<int>();
  mdp.n_actions = j.at("n_actions").get<int>();
  if (mdp.n_states < 1 || mdp.n_actions < 1) throw std::invalid_argument("mdp json: invalid sizes");
  const auto& rows = j.at("transitions");
  if (static_cast<int>(rows.size()) != mdp.n_states * mdp.n_actions) {
    throw std::invalid_argument("mdp json: expected one transition row per (state, action)");
  }
  mdp.transition.reserve(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != mdp.n_states) {
      throw std::invalid_argument("mdp json: transition row has wrong length");
    }
    for (const auto& p : row) mdp.transition.push_back(p.get<double>());
  }
  const auto& rewards = j.at("rewards");
  if (static_cast<int>(rewards.size()) != mdp.n_states) {
    throw std::invalid_argument("mdp json: expected one reward row per state");
  }
  for (const auto& row : rewards) {
    if (static_cast<int>(row.size()) != mdp.n_actions) {
      throw std::invalid_argument("mdp json: reward row has wrong length");
    }
    for (const auto& r : row) mdp.reward.push_back(r.get<double>());
  }
  if (j.contains("labels")) mdp.labels = j.at("labels").get<std::vector<std::string>>();
  if (j.contains("cycle_tags")) {
    for (const auto& row : j.at("cycle_tags")) {
      for (const auto& t : row) mdp.cycle_tag.push_back(static_cast<std::uint8_t>(t.get<int>()));
    }
    if (mdp.cycle_tag.size() != static_cast<std::size_t>(mdp.n_states) * mdp.n_actions) {
      throw std::invalid_argument("mdp json: cycle_tags has wrong shape");
    }
  }
  mdp.validate();
  return mdp;
}

}  // namespace avgopt
