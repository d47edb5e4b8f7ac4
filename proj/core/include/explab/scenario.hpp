#pragma once

// Scenario files: flat `key = value` lines, '#' starts a comment. Keys are
//
//   scenario.name, scenario.kind     codiverted | user_diverted | ablation |
//                                    data_diverted | linear_bandit
//   seeds                            comma list of world seeds
//   horizon                          days per run
//   plan.salt
//   world.<field>                    any WorldConfig field
//   arm.<label>.<field>              id, fraction, kind, greedy_on_ensemble,
//                                    slate_size, exploration_slots,
//                                    exploration_count, popularity,
//                                    similarity, fresh_tail,
//                                    hidden, activation, learning_rate,
//                                    network_seed, ensemble_size,
//                                    shared_bottom, batches_per_run,
//                                    bootstrap_keep,
//                                    batch_size, strategy, epsilon, sigma_sq,
//                                    mean_source, train_daily, ablation
//   metrics.<field>                  any ReportConfig field
//   aa.band.<metric> = lo,hi         stored A/A noise band
//   aa.metrics, aa.seeds, aa.z       calibration settings
//   ablation.levels, ablation.tail_days, ablation.salt
//   dd.<field>                       any DataDivertedPlan size; the plan's
//                                    arms are arm.control and arm.treatment
//   lb.<field>                       any LinearBanditConfig field
//
// Unknown keys and malformed values are errors.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "explab/experiments.hpp"

namespace explab {

enum class ScenarioKind { Codiverted, UserDiverted, Ablation, DataDiverted, LinearBandit };

const char* to_string(ScenarioKind kind);

struct Scenario {
  std::string name = "scenario";
  ScenarioKind kind = ScenarioKind::Codiverted;
  WorldConfig world;
  std::string salt = "experiment";
  std::vector<std::uint64_t> seeds{1};
  int horizon = 90;
  /// In order of first appearance in the file.
  std::vector<ArmSetup> arms;
  ReportConfig report;

  std::vector<AABand> aa_bands;
  std::vector<std::string> aa_metrics;
  std::size_t aa_seeds = 20;
  double aa_z = 3.0;

  AblationConfig ablation;
  DataDivertedPlan data_diverted;
  LinearBanditConfig linear_bandit;

  const ArmSetup& arm(const std::string& label) const;
  const AABand* band(const std::string& metric) const;
};

/// Throws std::runtime_error naming the line on any parse error.
Scenario parse_scenario(std::istream& in);
Scenario load_scenario(const std::filesystem::path& path);

/// Rewrites `key = value` lines in place, keeping comments and order, and
/// appends keys that were not present.
void update_scenario_keys(const std::filesystem::path& path,
                          const std::map<std::string, std::string>& values);

/// World seed substituted and per-arm network seeds mixed with it.
struct SeededScenario {
  WorldConfig world;
  std::vector<ArmSetup> arms;
};
SeededScenario seeded(const Scenario& s, std::uint64_t seed);

struct ScenarioRun {
  MetricsReport report;
  /// Final world of runs that simulate one; exported by the command line.
  std::optional<WorldState> world;
  /// Final serving snapshots per arm, when the design trains arms online.
  std::map<ArmId, PolicySpec> policies;
  /// Requests of the final simulated day, for uncertainty analysis.
  std::vector<RequestRecord> last_requests;
};

/// One run of the scenario's design under the given seed.
ScenarioRun run_scenario(const Scenario& s, std::uint64_t seed);

}  // namespace explab
