#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avgopt/learner.hpp"
#include "avgopt/mdp.hpp"

namespace avgopt {

inline constexpr const char* kVersion = "avgopt 0.1.0";

/// One experiment: an environment, a hierarchy, a learner configuration and
/// a number of independent seeds. Parsed from a JSON document; CLI flags
/// override individual fields.
struct ExperimentConfig {
  std::string name = "experiment";
  /// "trap-chain", "delivery-grid", or a path to an MDP JSON document.
  std::string environment = "trap-chain";
  TrapChainSpec trap;
  DeliveryGridSpec grid;
  int depth = 2;
  std::vector<int> options_per_level{2};
  LearnerConfig learner;
  int n_seeds = 5;
  std::uint64_t base_seed = 1;
  int max_workers = 0;  // 0 = hardware concurrency
  std::string out_dir;  // empty = AVGOPT_OUT or "runs"

  void validate() const;
};

ExperimentConfig experiment_from_json(const std::string& text);
std::string experiment_to_json(const ExperimentConfig& config);

/// Builds the configured environment.
TabularMdp build_environment(const ExperimentConfig& config);

/// Mean/std across seeds of the windowed reward series (lengths are equal
/// across seeds by construction).
struct AggregateCurve {
  std::vector<long long> steps;
  std::vector<double> mean_reward;
  std::vector<double> std_reward;
  std::vector<double> mean_gain_estimate;
  std::vector<double> std_gain_estimate;
};

AggregateCurve aggregate_windows(const std::vector<RunRecord>& records);

/// Reward statistics over the final decile of one run.
struct FinalDecileStats {
  long long steps = 0;
  double reward_sum = 0.0;
  long long cycles = 0;
  double reward_per_cycle = 0.0;  // 0 when no cycle completed
  std::map<int, long long> route_counts;
  int modal_route = 0;  // 0 when no cycle completed
};

FinalDecileStats final_decile_stats(const RunRecord& record, long long total_steps);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> records;
  AggregateCurve aggregate;
  int diverged_seeds = 0;
  double mean_final_reward_per_cycle = 0.0;
  int modal_route = 0;  // majority vote across seeds
};

/// Runs every seed (concurrently up to max_workers), writes per-seed CSVs,
/// the aggregate curve, a summary and a manifest into `dir`.
///
/// Artifacts: manifest.json, aggregate.csv, summary.json and one
/// seed_<n>/ directory per seed with curves.csv, windows.csv, traces.csv,
/// final_params.json and final_critic.json.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir);

/// CSV emission (comma separated, header row, 10 significant digits, LF).
std::string curves_csv(const RunRecord& record);
std::string windows_csv(const RunRecord& record);
std::string aggregate_csv(const AggregateCurve& curve);
/// Rows for the requested trace ids; empty selects everything the run
/// recorded. Ids that were not recorded are rejected.
std::string traces_csv(const RunRecord& record, const std::vector<int>& ids);

/// Closed-form analysis of the two-loop trap chain over a discount grid.
struct TrapProbe {
  double gamma = 0.0;
  double red_entry_value = 0.0;
  double blue_entry_value = 0.0;
  double red_closed_form = 0.0;
  double blue_closed_form = 0.0;
  std::string start_preference;  // "red" or "blue"
};

struct TrapReport {
  std::vector<TrapProbe> probes;
  double red_loop_gain = 0.0;
  double blue_loop_gain = 0.0;
};

TrapReport analyze_trap_chain(const TrapChainSpec& spec);
std::string trap_report_to_json(const TrapReport& report);
std::string trap_report_table(const TrapReport& report);

/// Exact value tables for the given parameters, keyed by state label and
/// option prefix.
std::string value_tables_json(const TabularMdp& mdp, const ActorParams& params, const HierarchySpec& spec);

/// Command line entry point; returns the process exit code (0 success,
/// 2 usage or validation failure, 1 runtime failure).
int run_cli(const std::vector<std::string>& args);

}  // namespace avgopt
