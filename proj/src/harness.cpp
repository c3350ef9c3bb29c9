#include "avgopt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "avgopt/exact_eval.hpp"
#include "avgopt/gradient.hpp"
#include "avgopt/linalg.hpp"

namespace avgopt {

namespace {

std::string fmt10(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path.string());
  out << content;
}

GridCell cell_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("grid cell must be [x, y]");
  return GridCell{j[0].get<int>(), j[1].get<int>()};
}

nlohmann::json cell_to_json(GridCell c) { return nlohmann::json::array({c.x, c.y}); }

std::string route_name(int route) {
  if (route == kRouteP1) return "P1";
  if (route == kRouteP2) return "P2";
  return route == 0 ? "none" : "route" + std::to_string(route);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (n_seeds < 1) throw std::invalid_argument("experiment: n_seeds must be >= 1");
  if (depth < 1) throw std::invalid_argument("experiment: depth must be >= 1");
  if (static_cast<int>(options_per_level.size()) != depth - 1) {
    throw std::invalid_argument("experiment: need one option count per level below the action level");
  }
  if (name.empty()) throw std::invalid_argument("experiment: name must not be empty");
  if (environment != "trap-chain" && environment != "delivery-grid") {
    if (!std::filesystem::exists(environment)) {
      throw std::invalid_argument("experiment: environment file not found: " + environment);
    }
  }
}

ExperimentConfig experiment_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig config;
  config.name = j.value("name", config.name);
  config.environment = j.value("environment", config.environment);
  if (j.contains("trap")) {
    const auto& t = j.at("trap");
    if (t.contains("discount_probe_set")) {
      config.trap.discount_probe_set = t.at("discount_probe_set").get<std::vector<double>>();
    }
    if (t.contains("red_loop_rewards")) {
      auto v = t.at("red_loop_rewards").get<std::vector<double>>();
      if (v.size() != 4) throw std::invalid_argument("trap: loop rewards need 4 entries");
      std::copy(v.begin(), v.end(), config.trap.red_loop_rewards.begin());
    }
    if (t.contains("blue_loop_rewards")) {
      auto v = t.at("blue_loop_rewards").get<std::vector<double>>();
      if (v.size() != 4) throw std::invalid_argument("trap: loop rewards need 4 entries");
      std::copy(v.begin(), v.end(), config.trap.blue_loop_rewards.begin());
    }
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    config.grid.width = g.value("width", config.grid.width);
    config.grid.height = g.value("height", config.grid.height);
    if (g.contains("walls")) {
      config.grid.walls.clear();
      for (const auto& w : g.at("walls")) config.grid.walls.push_back(cell_from_json(w));
    }
    if (g.contains("pickup_p1")) config.grid.pickup_p1 = cell_from_json(g.at("pickup_p1"));
    if (g.contains("pickup_p2")) config.grid.pickup_p2 = cell_from_json(g.at("pickup_p2"));
    if (g.contains("dropoff")) config.grid.dropoff = cell_from_json(g.at("dropoff"));
    if (g.contains("junction_trap")) config.grid.junction_trap = cell_from_json(g.at("junction_trap"));
    if (g.contains("junction_alt")) config.grid.junction_alt = cell_from_json(g.at("junction_alt"));
    config.grid.junction_trap_reward = g.value("junction_trap_reward", config.grid.junction_trap_reward);
    config.grid.junction_alt_reward = g.value("junction_alt_reward", config.grid.junction_alt_reward);
    config.grid.parcel_reward_p1 = g.value("parcel_reward_p1", config.grid.parcel_reward_p1);
    config.grid.parcel_reward_p2 = g.value("parcel_reward_p2", config.grid.parcel_reward_p2);
    config.grid.step_reward = g.value("step_reward", config.grid.step_reward);
    config.grid.junction_once_per_cycle =
        g.value("junction_once_per_cycle", config.grid.junction_once_per_cycle);
  }
  config.depth = j.value("depth", config.depth);
  if (j.contains("options_per_level")) {
    config.options_per_level = j.at("options_per_level").get<std::vector<int>>();
  } else if (config.depth >= 1) {
    config.options_per_level.assign(static_cast<std::size_t>(config.depth - 1), 2);
  }
  if (j.contains("mode")) {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "average-reward" || mode == "ar") {
      config.learner.mode = RewardMode::average_reward;
    } else if (mode == "discounted" || mode == "dr") {
      config.learner.mode = RewardMode::discounted;
    } else {
      throw std::invalid_argument("config: unknown mode '" + mode + "'");
    }
  }
  if (j.contains("gamma")) config.learner.gamma = j.at("gamma").get<double>();
  if (config.learner.mode == RewardMode::discounted && !config.learner.gamma.has_value()) {
    config.learner.gamma = 0.9;
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    config.learner.schedule.actor_scale = s.value("a0", config.learner.schedule.actor_scale);
    config.learner.schedule.critic_scale = s.value("b0", config.learner.schedule.critic_scale);
    config.learner.schedule.gain_scale = s.value("eta0", config.learner.schedule.gain_scale);
    config.learner.schedule.actor_decay = s.value("p_a", config.learner.schedule.actor_decay);
    config.learner.schedule.critic_decay = s.value("p_b", config.learner.schedule.critic_decay);
    config.learner.schedule.actor_cap = s.value("cap_a", config.learner.schedule.actor_cap);
    config.learner.schedule.critic_cap = s.value("cap_b", config.learner.schedule.critic_cap);
    config.learner.schedule.gain_cap = s.value("cap_eta", config.learner.schedule.gain_cap);
  }
  config.learner.total_steps = j.value("total_steps", config.learner.total_steps);
  if (j.contains("trace_param_ids")) {
    config.learner.trace_param_ids = j.at("trace_param_ids").get<std::vector<int>>();
  }
  config.learner.trace_every = j.value("trace_every", config.learner.trace_every);
  config.learner.window = j.value("window", config.learner.window);
  config.learner.freeze_actor = j.value("freeze_actor", config.learner.freeze_actor);
  config.learner.start_state = j.value("start_state", config.learner.start_state);
  config.learner.projection_bound = j.value("projection_bound", config.learner.projection_bound);
  config.n_seeds = j.value("n_seeds", config.n_seeds);
  config.base_seed = j.value("seed", config.base_seed);
  config.max_workers = j.value("max_workers", config.max_workers);
  config.out_dir = j.value("out", config.out_dir);
  return config;
}

std::string experiment_to_json(const ExperimentConfig& config) {
  nlohmann::json j;
  j["name"] = config.name;
  j["environment"] = config.environment;
  j["trap"]["discount_probe_set"] = config.trap.discount_probe_set;
  j["trap"]["red_loop_rewards"] = config.trap.red_loop_rewards;
  j["trap"]["blue_loop_rewards"] = config.trap.blue_loop_rewards;
  auto& g = j["grid"];
  g["width"] = config.grid.width;
  g["height"] = config.grid.height;
  auto walls = nlohmann::json::array();
  for (GridCell w : config.grid.walls) walls.push_back(cell_to_json(w));
  g["walls"] = std::move(walls);
  g["pickup_p1"] = cell_to_json(config.grid.pickup_p1);
  g["pickup_p2"] = cell_to_json(config.grid.pickup_p2);
  g["dropoff"] = cell_to_json(config.grid.dropoff);
  g["junction_trap"] = cell_to_json(config.grid.junction_trap);
  g["junction_trap_reward"] = config.grid.junction_trap_reward;
  g["junction_alt"] = cell_to_json(config.grid.junction_alt);
  g["junction_alt_reward"] = config.grid.junction_alt_reward;
  g["parcel_reward_p1"] = config.grid.parcel_reward_p1;
  g["parcel_reward_p2"] = config.grid.parcel_reward_p2;
  g["step_reward"] = config.grid.step_reward;
  g["junction_once_per_cycle"] = config.grid.junction_once_per_cycle;
  j["depth"] = config.depth;
  j["options_per_level"] = config.options_per_level;
  j["mode"] = config.learner.mode == RewardMode::average_reward ? "average-reward" : "discounted";
  if (config.learner.gamma.has_value()) j["gamma"] = *config.learner.gamma;
  auto& s = j["schedule"];
  s["a0"] = config.learner.schedule.actor_scale;
  s["b0"] = config.learner.schedule.critic_scale;
  s["eta0"] = config.learner.schedule.gain_scale;
  s["p_a"] = config.learner.schedule.actor_decay;
  s["p_b"] = config.learner.schedule.critic_decay;
  s["cap_a"] = config.learner.schedule.actor_cap;
  s["cap_b"] = config.learner.schedule.critic_cap;
  s["cap_eta"] = config.learner.schedule.gain_cap;
  j["total_steps"] = config.learner.total_steps;
  j["trace_param_ids"] = config.learner.trace_param_ids;
  j["trace_every"] = config.learner.trace_every;
  j["window"] = config.learner.window;
  j["freeze_actor"] = config.learner.freeze_actor;
  j["start_state"] = config.learner.start_state;
  j["projection_bound"] = config.learner.projection_bound;
  j["n_seeds"] = config.n_seeds;
  j["seed"] = config.base_seed;
  j["max_workers"] = config.max_workers;
  j["out"] = config.out_dir;
  return j.dump(2);
}

TabularMdp build_environment(const ExperimentConfig& config) {
  if (config.environment == "trap-chain") return build_trap_chain(config.trap);
  if (config.environment == "delivery-grid") return build_delivery_grid(config.grid);
  return mdp_from_json(read_text_file(config.environment));
}

AggregateCurve aggregate_windows(const std::vector<RunRecord>& records) {
  AggregateCurve curve;
  if (records.empty()) return curve;
  std::size_t length = records.front().windows.size();
  for (const RunRecord& r : records) length = std::min(length, r.windows.size());
  const double n = static_cast<double>(records.size());
  for (std::size_t i = 0; i < length; ++i) {
    double mean_r = 0.0;
    double mean_j = 0.0;
    for (const RunRecord& r : records) {
      mean_r += r.windows[i].avg_reward;
      mean_j += r.windows[i].gain_estimate;
    }
    mean_r /= n;
    mean_j /= n;
    double var_r = 0.0;
    double var_j = 0.0;
    for (const RunRecord& r : records) {
      var_r += (r.windows[i].avg_reward - mean_r) * (r.windows[i].avg_reward - mean_r);
      var_j += (r.windows[i].gain_estimate - mean_j) * (r.windows[i].gain_estimate - mean_j);
    }
    curve.steps.push_back(records.front().windows[i].step);
    curve.mean_reward.push_back(mean_r);
    curve.std_reward.push_back(std::sqrt(var_r / n));
    curve.mean_gain_estimate.push_back(mean_j);
    curve.std_gain_estimate.push_back(std::sqrt(var_j / n));
  }
  return curve;
}

FinalDecileStats final_decile_stats(const RunRecord& record, long long total_steps) {
  FinalDecileStats stats;
  const long long start = total_steps - total_steps / 10;
  stats.steps = total_steps - start;
  for (const WindowPoint& w : record.windows) {
    if (w.step >= start) stats.reward_sum += w.avg_reward;
  }
  for (const CyclePoint& c : record.cycles) {
    if (c.step < start) continue;
    ++stats.cycles;
    stats.reward_per_cycle += c.reward;
    ++stats.route_counts[c.route];
  }
  if (stats.cycles > 0) {
    stats.reward_per_cycle /= static_cast<double>(stats.cycles);
    long long best = 0;
    for (const auto& [route, count] : stats.route_counts) {
      if (count > best) {
        best = count;
        stats.modal_route = route;
      }
    }
  } else {
    stats.reward_per_cycle = 0.0;
  }
  return stats;
}

std::string curves_csv(const RunRecord& record) {
  std::ostringstream out;
  out << "step,cycle,reward_per_cycle_or_window,jhat\n";
  if (record.cyclic_env) {
    for (const CyclePoint& c : record.cycles) {
      out << c.step << ',' << c.cycle << ',' << fmt10(c.reward) << ',' << fmt10(c.gain_estimate) << '\n';
    }
  } else {
    long long window_index = 1;
    for (const WindowPoint& w : record.windows) {
      out << w.step << ',' << window_index++ << ',' << fmt10(w.avg_reward) << ','
          << fmt10(w.gain_estimate) << '\n';
    }
  }
  return out.str();
}

std::string windows_csv(const RunRecord& record) {
  std::ostringstream out;
  out << "step,window,avg_reward,jhat\n";
  long long window_index = 1;
  for (const WindowPoint& w : record.windows) {
    out << w.step << ',' << window_index++ << ',' << fmt10(w.avg_reward) << ',' << fmt10(w.gain_estimate)
        << '\n';
  }
  return out.str();
}

std::string aggregate_csv(const AggregateCurve& curve) {
  std::ostringstream out;
  out << "step,mean_reward_per_window,std_reward_per_window,mean_jhat,std_jhat\n";
  for (std::size_t i = 0; i < curve.steps.size(); ++i) {
    out << curve.steps[i] << ',' << fmt10(curve.mean_reward[i]) << ',' << fmt10(curve.std_reward[i]) << ','
        << fmt10(curve.mean_gain_estimate[i]) << ',' << fmt10(curve.std_gain_estimate[i]) << '\n';
  }
  return out.str();
}

std::string traces_csv(const RunRecord& record, const std::vector<int>& ids) {
  const std::vector<int>& wanted = ids.empty() ? record.trace_ids : ids;
  for (int id : wanted) {
    if (std::find(record.trace_ids.begin(), record.trace_ids.end(), id) == record.trace_ids.end()) {
      throw std::invalid_argument("trace id " + std::to_string(id) + " was not recorded by this run");
    }
  }
  std::ostringstream out;
  out << "step,param_id,value\n";
  for (const TracePoint& t : record.traces) {
    if (std::find(wanted.begin(), wanted.end(), t.param_id) == wanted.end()) continue;
    out << t.step << ',' << t.param_id << ',' << fmt10(t.value) << '\n';
  }
  return out.str();
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir) {
  config.validate();
  const TabularMdp mdp = build_environment(config);

  HierarchySpec spec;
  spec.depth = config.depth;
  spec.options_per_level = config.options_per_level;
  spec.n_actions = mdp.n_actions;
  spec.n_states = mdp.n_states;
  spec.validate();

  LearnerConfig base = config.learner;
  base.validate(spec, mdp);

  ExperimentResult result;
  result.config = config;
  for (int i = 0; i < config.n_seeds; ++i) result.seeds.push_back(config.base_seed + i);
  result.records.resize(config.n_seeds);

  const int hardware = static_cast<int>(std::thread::hardware_concurrency());
  int workers = config.max_workers > 0 ? config.max_workers : std::max(1, hardware);
  workers = std::min(workers, config.n_seeds);

  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.n_seeds));
  auto body = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= config.n_seeds) return;
      try {
        LearnerConfig local = base;
        local.seed = result.seeds[i];
        result.records[i] = train(mdp, spec, local);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<RunRecord> surviving;
  for (const RunRecord& r : result.records) {
    if (r.diverged) {
      ++result.diverged_seeds;
    } else {
      surviving.push_back(r);
    }
  }
  result.aggregate = aggregate_windows(surviving);

  // Final-decile metrics and the modal route vote.
  std::map<int, int> route_votes;
  double reward_per_cycle_sum = 0.0;
  int contributing = 0;
  nlohmann::json per_seed = nlohmann::json::array();
  for (int i = 0; i < config.n_seeds; ++i) {
    const RunRecord& r = result.records[i];
    const FinalDecileStats stats = final_decile_stats(r, base.total_steps);
    if (!r.diverged) {
      reward_per_cycle_sum += stats.reward_per_cycle;
      ++contributing;
      if (stats.modal_route != 0) ++route_votes[stats.modal_route];
    }
    nlohmann::json entry;
    entry["seed"] = result.seeds[i];
    entry["diverged"] = r.diverged;
    if (r.diverged) entry["divergence_message"] = r.divergence_message;
    entry["steps_completed"] = r.steps_completed;
    entry["final_gain_estimate"] = r.final_critic.gain_estimate;
    entry["final_decile_drift"] = r.final_decile_drift;
    entry["final_decile"]["steps"] = stats.steps;
    entry["final_decile"]["reward_window_sum"] = stats.reward_sum;
    entry["final_decile"]["cycles"] = stats.cycles;
    entry["final_decile"]["reward_per_cycle"] = stats.reward_per_cycle;
    entry["final_decile"]["modal_route"] = route_name(stats.modal_route);
    for (const auto& [route, count] : stats.route_counts) {
      entry["final_decile"]["route_counts"][route_name(route)] = count;
    }
    per_seed.push_back(std::move(entry));
  }
  if (contributing > 0) result.mean_final_reward_per_cycle = reward_per_cycle_sum / contributing;
  int best_votes = 0;
  for (const auto& [route, votes] : route_votes) {
    if (votes > best_votes) {
      best_votes = votes;
      result.modal_route = route;
    }
  }

  // Artifacts.
  std::filesystem::create_directories(dir);
  for (int i = 0; i < config.n_seeds; ++i) {
    const RunRecord& r = result.records[i];
    const std::filesystem::path seed_dir = dir / ("seed_" + std::to_string(result.seeds[i]));
    std::filesystem::create_directories(seed_dir);
    write_text_file(seed_dir / "curves.csv", curves_csv(r));
    write_text_file(seed_dir / "windows.csv", windows_csv(r));
    write_text_file(seed_dir / "traces.csv", traces_csv(r, {}));
    write_text_file(seed_dir / "final_params.json", params_to_json(r.final_params, spec));
    nlohmann::json critic;
    critic["gain_estimate"] = r.final_critic.gain_estimate;
    critic["weights"] = r.final_critic.weights;
    write_text_file(seed_dir / "final_critic.json", critic.dump(2));
  }
  write_text_file(dir / "aggregate.csv", aggregate_csv(result.aggregate));

  nlohmann::json summary;
  summary["n_seeds"] = config.n_seeds;
  summary["diverged_seeds"] = result.diverged_seeds;
  summary["mean_final_reward_per_cycle"] = result.mean_final_reward_per_cycle;
  summary["modal_route"] = route_name(result.modal_route);
  summary["per_seed"] = std::move(per_seed);
  write_text_file(dir / "summary.json", summary.dump(2));

  nlohmann::json manifest;
  manifest["name"] = config.name;
  manifest["version"] = kVersion;
  {
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    manifest["created_utc"] = stamp;
  }
  manifest["config"] = nlohmann::json::parse(experiment_to_json(config));
  manifest["seeds"] = result.seeds;
  manifest["environment"]["n_states"] = mdp.n_states;
  manifest["environment"]["n_actions"] = mdp.n_actions;
  manifest["environment"]["cyclic"] = mdp.has_cycle_events();
  if (!result.records.empty()) {
    FeatureMap features;
    manifest["trace_ids"] = result.records.front().trace_ids;
    nlohmann::json names;
    for (int id : result.records.front().trace_ids) {
      names[std::to_string(id)] = trace_id_name(spec, features, id);
    }
    manifest["trace_names"] = std::move(names);
  }
  write_text_file(dir / "manifest.json", manifest.dump(2));

  return result;
}

TrapReport analyze_trap_chain(const TrapChainSpec& spec) {
  const TabularMdp mdp = build_trap_chain(spec);
  TrapReport report;

  auto closed_form = [](const std::array<double, 4>& rewards, double gamma) {
    double numerator = 0.0;
    double discount = 1.0;
    for (double r : rewards) {
      numerator += discount * r;
      discount *= gamma;
    }
    return numerator / (1.0 - discount);
  };

  const FlatPolicy red = committed_flat_policy(mdp, kTrapActionRed);
  const FlatPolicy blue = committed_flat_policy(mdp, kTrapActionBlue);
  for (double gamma : spec.discount_probe_set) {
    const std::vector<double> v_red = discounted_values(mdp, red, gamma);
    const std::vector<double> v_blue = discounted_values(mdp, blue, gamma);
    TrapProbe probe;
    probe.gamma = gamma;
    probe.red_entry_value = v_red[kTrapRedEntry];
    probe.blue_entry_value = v_blue[kTrapBlueEntry];
    probe.red_closed_form = closed_form(spec.red_loop_rewards, gamma);
    probe.blue_closed_form = closed_form(spec.blue_loop_rewards, gamma);
    probe.start_preference = v_blue[kTrapStart] > v_red[kTrapStart] ? "blue" : "red";
    report.probes.push_back(probe);
  }

  // Steady-state reward per step of each committed loop.
  auto flat_gain = [&](const FlatPolicy& policy) {
    DenseMatrix p(mdp.n_states, mdp.n_states);
    std::vector<double> r(static_cast<std::size_t>(mdp.n_states), 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double prob = policy.row(s)[a];
        if (prob == 0.0) continue;
        r[s] += prob * mdp.reward_at(s, a);
        auto row = mdp.transition_row(s, a);
        for (int next = 0; next < mdp.n_states; ++next) p.at(s, next) += prob * row[next];
      }
    }
    const std::vector<double> d = stationary_vector(p);
    double gain = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) gain += d[s] * r[s];
    return gain;
  };
  report.red_loop_gain = flat_gain(red);
  report.blue_loop_gain = flat_gain(blue);
  return report;
}

std::string trap_report_to_json(const TrapReport& report) {
  nlohmann::json j;
  auto probes = nlohmann::json::array();
  for (const TrapProbe& p : report.probes) {
    nlohmann::json row;
    row["gamma"] = p.gamma;
    row["red_entry_value"] = p.red_entry_value;
    row["blue_entry_value"] = p.blue_entry_value;
    row["red_closed_form"] = p.red_closed_form;
    row["blue_closed_form"] = p.blue_closed_form;
    row["red_abs_error"] = std::fabs(p.red_entry_value - p.red_closed_form);
    row["blue_abs_error"] = std::fabs(p.blue_entry_value - p.blue_closed_form);
    row["start_preference"] = p.start_preference;
    probes.push_back(std::move(row));
  }
  j["probes"] = std::move(probes);
  j["red_loop_gain"] = report.red_loop_gain;
  j["blue_loop_gain"] = report.blue_loop_gain;
  return j.dump(2);
}

std::string trap_report_table(const TrapReport& report) {
  std::ostringstream out;
  out << "trap chain discounted analysis (entry values of the committed loops)\n";
  out << " gamma    v_red(S11)     v_blue(S21)    closed red     closed blue    chosen at S0\n";
  for (const TrapProbe& p : report.probes) {
    char line[160];
    std::snprintf(line, sizeof(line), "%6.4g   %-12.10g   %-12.10g   %-12.10g   %-12.10g   %s\n", p.gamma,
                  p.red_entry_value, p.blue_entry_value, p.red_closed_form, p.blue_closed_form,
                  p.start_preference.c_str());
    out << line;
  }
  char gains[96];
  std::snprintf(gains, sizeof(gains), "average reward per step: red loop %.10g, blue loop %.10g\n",
                report.red_loop_gain, report.blue_loop_gain);
  out << gains;
  return out.str();
}

namespace {

std::string prefix_key(const HierarchySpec& spec, const TabularMdp& mdp, int level, int context) {
  const int state = context / spec.prefix_count(level);
  int prefix = context % spec.prefix_count(level);
  std::string key = mdp.label(state).empty() ? "s" + std::to_string(state) : mdp.label(state);
  if (level >= 1) {
    key += "|o";
    for (int l = 1; l <= level; ++l) {
      if (l > 1) key += ".";
      key += std::to_string(prefix % spec.options_at(l));
      prefix /= spec.options_at(l);
    }
  }
  return key;
}

}  // namespace

std::string value_tables_json(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec) {
  const auto [tables, advantage] = solve_values(mdp, params, spec);
  nlohmann::json j;
  j["gain"] = tables.gain;
  j["centering"] = "stationary_mean_zero";
  for (int level = 0; level < spec.depth; ++level) {
    nlohmann::json block;
    for (int ctx = 0; ctx < mdp.n_states * spec.prefix_count(level); ++ctx) {
      block[prefix_key(spec, mdp, level, ctx)] = tables.option_value[level][ctx];
    }
    j["option_values"]["level_" + std::to_string(level)] = std::move(block);
  }
  const int n_stacks = spec.stack_count();
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < n_stacks; ++k) {
      const std::string key = prefix_key(spec, mdp, spec.depth - 1, s * n_stacks + k);
      std::vector<double> q(static_cast<std::size_t>(mdp.n_actions));
      for (int a = 0; a < mdp.n_actions; ++a) {
        q[a] = tables.action_value[(static_cast<std::size_t>(s) * n_stacks + k) * mdp.n_actions + a];
      }
      j["action_values"][key] = std::move(q);
      j["arrival_values"][key] = tables.arrival_value[static_cast<std::size_t>(s) * n_stacks + k];
    }
  }
  for (int level = 1; level <= spec.depth - 1; ++level) {
    nlohmann::json block;
    for (int ctx = 0; ctx < mdp.n_states * spec.prefix_count(level); ++ctx) {
      block[prefix_key(spec, mdp, level, ctx)] = advantage.value[level - 1][ctx];
    }
    j["advantages"]["level_" + std::to_string(level)] = std::move(block);
  }
  return j.dump(2);
}

namespace {

std::string timestamp_dir_name() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm_utc);
  return stamp;
}

std::filesystem::path pick_output_dir(const ExperimentConfig& config, const std::string& flag_out) {
  std::string base = flag_out;
  if (base.empty()) base = config.out_dir;
  if (base.empty()) {
    if (const char* env = std::getenv("AVGOPT_OUT")) base = env;
  }
  if (base.empty()) base = "runs";
  std::filesystem::path dir = std::filesystem::path(base) / config.name / timestamp_dir_name();
  int suffix = 1;
  while (std::filesystem::exists(dir)) {
    dir = std::filesystem::path(base) / config.name / (timestamp_dir_name() + "-" + std::to_string(suffix++));
  }
  return dir;
}

struct CliTrainFlags {
  std::string config_path;
  std::string out;
  std::string name;
  std::string environment;
  std::string mode;
  double gamma = -1.0;
  long long steps = -1;
  long long seed = -1;
  int n_seeds = -1;
  int depth = -1;
};

ExperimentConfig load_config_with_flags(const CliTrainFlags& flags) {
  ExperimentConfig config;
  if (!flags.config_path.empty()) config = experiment_from_json(read_text_file(flags.config_path));
  if (!flags.name.empty()) config.name = flags.name;
  if (!flags.environment.empty()) config.environment = flags.environment;
  if (!flags.mode.empty()) {
    if (flags.mode == "average-reward" || flags.mode == "ar") {
      config.learner.mode = RewardMode::average_reward;
      config.learner.gamma.reset();
    } else if (flags.mode == "discounted" || flags.mode == "dr") {
      config.learner.mode = RewardMode::discounted;
      if (!config.learner.gamma.has_value()) config.learner.gamma = 0.9;
    } else {
      throw std::invalid_argument("unknown mode '" + flags.mode + "' (use average-reward or discounted)");
    }
  }
  if (flags.gamma >= 0.0) config.learner.gamma = flags.gamma;
  if (config.learner.mode == RewardMode::average_reward) config.learner.gamma.reset();
  if (flags.steps >= 0) config.learner.total_steps = flags.steps;
  if (flags.seed >= 0) config.base_seed = static_cast<std::uint64_t>(flags.seed);
  if (flags.n_seeds >= 0) config.n_seeds = flags.n_seeds;
  if (flags.depth >= 1) {
    config.depth = flags.depth;
    config.options_per_level.assign(static_cast<std::size_t>(flags.depth - 1), 2);
  }
  return config;
}

void apply_override(nlohmann::json& doc, const std::string& dotted, const nlohmann::json& value) {
  nlohmann::json* at = &doc;
  std::size_t begin = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', begin);
    const std::string key = dotted.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (dot == std::string::npos) {
      (*at)[key] = value;
      return;
    }
    at = &(*at)[key];
    begin = dot + 1;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"average-reward option-critic learning and exact evaluation"};
  app.require_subcommand(1);
  int result = 0;

  // train
  auto train_flags = std::make_shared<CliTrainFlags>();
  CLI::App* train_cmd = app.add_subcommand("train", "run a multi-seed learning experiment");
  train_cmd->add_option("--config", train_flags->config_path, "experiment JSON document");
  train_cmd->add_option("--out", train_flags->out, "output directory root");
  train_cmd->add_option("--name", train_flags->name, "experiment name");
  train_cmd->add_option("--env", train_flags->environment, "trap-chain | delivery-grid | mdp.json");
  train_cmd->add_option("--mode", train_flags->mode, "average-reward | discounted");
  train_cmd->add_option("--gamma", train_flags->gamma, "discount factor for discounted mode");
  train_cmd->add_option("--steps", train_flags->steps, "steps per run");
  train_cmd->add_option("--seed", train_flags->seed, "base seed");
  train_cmd->add_option("--seeds", train_flags->n_seeds, "number of seeds");
  train_cmd->add_option("--depth", train_flags->depth, "hierarchy depth (2 options per level)");
  train_cmd->callback([train_flags, &result]() {
    const ExperimentConfig config = load_config_with_flags(*train_flags);
    const std::filesystem::path dir = pick_output_dir(config, train_flags->out);
    const ExperimentResult res = run_experiment(config, dir);
    std::cout << "experiment '" << config.name << "' finished: " << res.seeds.size() << " seeds, "
              << res.diverged_seeds << " diverged\n";
    if (res.diverged_seeds > 0) {
      std::cout << "warning: " << res.diverged_seeds << " seed(s) diverged; aggregate covers survivors\n";
    }
    std::cout << "mean final reward per cycle: " << fmt10(res.mean_final_reward_per_cycle) << "\n";
    std::cout << "artifacts: " << dir.string() << "\n";
    result = 0;
  });

  // gradcheck
  auto grad_instances = std::make_shared<int>(20);
  auto grad_seed = std::make_shared<long long>(7);
  auto grad_step = std::make_shared<double>(1e-5);
  auto grad_tol = std::make_shared<double>(1e-4);
  auto grad_json = std::make_shared<std::string>();
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "compare the assembled gradient to finite differences");
  grad_cmd->add_option("--instances", *grad_instances, "number of random instances");
  grad_cmd->add_option("--seed", *grad_seed, "instance generator seed");
  grad_cmd->add_option("--step", *grad_step, "finite-difference step");
  grad_cmd->add_option("--tolerance", *grad_tol, "max relative error accepted");
  grad_cmd->add_option("--json", *grad_json, "write the machine-readable report here");
  grad_cmd->callback([=, &result]() {
    const GradcheckReport report =
        run_gradcheck(*grad_instances, static_cast<std::uint64_t>(*grad_seed), *grad_step, *grad_tol);
    std::cout << gradcheck_table(report);
    if (!grad_json->empty()) write_text_file(*grad_json, gradcheck_to_json(report));
    result = report.pass ? 0 : 1;
  });

  // trap-analyze
  auto trap_gammas = std::make_shared<std::vector<double>>();
  auto trap_json = std::make_shared<std::string>();
  CLI::App* trap_cmd = app.add_subcommand("trap-analyze", "closed-form analysis of the two-loop trap chain");
  trap_cmd->add_option("--gamma", *trap_gammas, "discount probes (repeatable)");
  trap_cmd->add_option("--json", *trap_json, "write the machine-readable report here");
  trap_cmd->callback([=, &result]() {
    TrapChainSpec spec;
    if (!trap_gammas->empty()) spec.discount_probe_set = *trap_gammas;
    for (double gamma : spec.discount_probe_set) {
      if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma probes must lie in (0,1)");
    }
    const TrapReport report = analyze_trap_chain(spec);
    std::cout << trap_report_table(report);
    if (!trap_json->empty()) write_text_file(*trap_json, trap_report_to_json(report));
    result = 0;
  });

  // eval
  auto eval_env = std::make_shared<std::string>("trap-chain");
  auto eval_depth = std::make_shared<int>(2);
  auto eval_options = std::make_shared<std::vector<int>>();
  auto eval_params = std::make_shared<std::string>();
  auto eval_out = std::make_shared<std::string>();
  CLI::App* eval_cmd = app.add_subcommand("eval", "exact value tables for given parameters");
  eval_cmd->add_option("--env", *eval_env, "trap-chain | delivery-grid | mdp.json");
  eval_cmd->add_option("--depth", *eval_depth, "hierarchy depth");
  eval_cmd->add_option("--options", *eval_options, "options per level (default 2 each)");
  eval_cmd->add_option("--params", *eval_params, "actor parameter snapshot JSON (default all zeros)");
  eval_cmd->add_option("--json", *eval_out, "write tables here instead of stdout");
  eval_cmd->callback([=, &result]() {
    ExperimentConfig env_config;
    env_config.environment = *eval_env;
    env_config.validate();
    const TabularMdp mdp = build_environment(env_config);
    HierarchySpec spec;
    spec.depth = *eval_depth;
    spec.options_per_level = eval_options->empty()
                                 ? std::vector<int>(static_cast<std::size_t>(*eval_depth - 1), 2)
                                 : *eval_options;
    spec.n_actions = mdp.n_actions;
    spec.n_states = mdp.n_states;
    spec.validate();
    ActorParams params = eval_params->empty() ? make_zero_params(spec)
                                              : params_from_json(spec, read_text_file(*eval_params));
    const std::string tables = value_tables_json(mdp, params, spec);
    if (eval_out->empty()) {
      std::cout << tables << "\n";
    } else {
      write_text_file(*eval_out, tables);
    }
    result = 0;
  });

  // sweep
  auto sweep_config = std::make_shared<std::string>();
  auto sweep_out = std::make_shared<std::string>();
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "cartesian product over listed hyperparameters");
  sweep_cmd->add_option("--config", *sweep_config, "experiment JSON with a top-level \"sweep\" object")
      ->required();
  sweep_cmd->add_option("--out", *sweep_out, "output directory root");
  sweep_cmd->callback([=, &result]() {
    nlohmann::json doc = nlohmann::json::parse(read_text_file(*sweep_config));
    if (!doc.contains("sweep") || !doc.at("sweep").is_object() || doc.at("sweep").empty()) {
      throw std::invalid_argument("sweep: config needs a non-empty top-level \"sweep\" object");
    }
    const nlohmann::json grid = doc.at("sweep");
    doc.erase("sweep");
    std::vector<std::string> keys;
    std::vector<std::vector<nlohmann::json>> values;
    for (const auto& [key, list] : grid.items()) {
      if (!list.is_array() || list.empty()) {
        throw std::invalid_argument("sweep: field '" + key + "' must map to a non-empty array");
      }
      keys.push_back(key);
      values.emplace_back(list.begin(), list.end());
    }
    const ExperimentConfig base = experiment_from_json(doc.dump());
    const std::filesystem::path root = pick_output_dir(base, *sweep_out);
    std::filesystem::create_directories(root);

    nlohmann::json index = nlohmann::json::array();
    std::vector<std::size_t> cursor(keys.size(), 0);
    int combo = 0;
    for (;;) {
      nlohmann::json combo_doc = doc;
      nlohmann::json overrides;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        apply_override(combo_doc, keys[i], values[i][cursor[i]]);
        overrides[keys[i]] = values[i][cursor[i]];
      }
      const ExperimentConfig config = experiment_from_json(combo_doc.dump());
      const std::filesystem::path dir = root / ("combo_" + std::to_string(combo));
      const ExperimentResult res = run_experiment(config, dir);
      nlohmann::json entry;
      entry["combo"] = combo;
      entry["overrides"] = overrides;
      entry["dir"] = dir.string();
      entry["mean_final_reward_per_cycle"] = res.mean_final_reward_per_cycle;
      entry["diverged_seeds"] = res.diverged_seeds;
      index.push_back(std::move(entry));
      ++combo;
      std::size_t level = 0;
      for (; level < cursor.size(); ++level) {
        if (++cursor[level] < values[level].size()) break;
        cursor[level] = 0;
      }
      if (level == cursor.size()) break;
    }
    write_text_file(root / "sweep_index.json", index.dump(2));
    std::cout << "sweep finished: " << combo << " configurations under " << root.string() << "\n";
    result = 0;
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return result;
}

}  // namespace avgopt
