#pragma once

// Config-driven experiment runner and parameter sweeps. The config grammar is
// documented in README.md.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "leap/environments.hpp"
#include "leap/learn.hpp"
#include "leap/pomdp.hpp"

namespace leap {

inline constexpr const char* kArtifactVersion = "1.0.0";

/// Parse or validation failure; `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line);
  int line() const { return line_; }

 private:
  int line_;
};

enum class EnvironmentKind { kTiger, kHiddenObject };

struct EnvironmentConfig {
  EnvironmentKind kind = EnvironmentKind::kHiddenObject;
  int horizon = 12;
  bool fully_observed = false;
  // tiger
  double accuracy = 0.85;
  double listen_cost = -1.0;
  double correct_reward = 10.0;
  double wrong_penalty = -100.0;
  // hidden_object
  int num_locations = 8;
  std::vector<double> prior;  // empty means uniform
  double move_cost = -1.0;
  double deliver_reward = 10.0;
  SearchSensing sensing = SearchSensing::kPickReveals;
};

struct ExperimentConfig {
  EnvironmentConfig environment;
  /// Demonstrations take the non-privileged expert's argmax when true and
  /// sample from it otherwise.
  bool greedy_demonstrations = true;
  LeapConfig leap;
  AnalysisOptions analysis;
  std::filesystem::path output_directory;
  bool write_json = true;
  bool write_csv = true;
};

/// Throws ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

PomdpSpec build_environment(const EnvironmentConfig& config);

/// Every field that influences the results, in a fixed layout. The output
/// block is left out so moving a run does not change its digest.
nlohmann::json canonical_json(const ExperimentConfig& config);
/// 64-bit FNV-1a of the canonical JSON, as 16 hex digits.
std::string config_digest(const ExperimentConfig& config);

struct ExperimentOutcome {
  LeapResult result;
  int best_iteration = 0;
};

/// Runs the experiment in memory; writes nothing.
ExperimentOutcome execute_experiment(const ExperimentConfig& config);

/// Writes metrics, snapshots and the manifest into the configured directory.
/// Each file goes to a temporary name first and is renamed into place.
void write_experiment_outputs(const ExperimentConfig& config, const ExperimentOutcome& outcome);

/// Command-line overrides applied after parsing.
struct RunOverrides {
  std::optional<std::filesystem::path> output_directory;
  std::optional<std::uint64_t> root_seed;
};

/// Exit status: 0 on success, 2 on a parse or validation failure, 1 on a
/// runtime failure. Messages go to `err`.
int run_experiment(const std::filesystem::path& config_path, const RunOverrides& overrides,
                   std::ostream& err);

enum class SweepParameter { kDelta, kLambda, kTruncationWindow };
std::optional<SweepParameter> parse_sweep_parameter(const std::string& name);
std::string to_string(SweepParameter parameter);

/// Copy of `base` with the parameter set to `value`. Throws ConfigError when
/// the value or the teacher type does not fit the parameter.
ExperimentConfig with_parameter(const ExperimentConfig& base, SweepParameter parameter,
                                double value);

struct TradeoffRow {
  double value = 0.0;
  double final_success = 0.0;
  double final_J = 0.0;
  double theorem1_slack = 0.0;
  double realizability_gap = 0.0;
};

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows);

/// One run per value under `<out>/<parameter>_<value>/`, all with the same
/// root seed, then `<out>/tradeoff.csv`. Exit codes as run_experiment.
int sweep_tradeoff(const std::filesystem::path& config_path, SweepParameter parameter,
                   const std::vector<double>& values, const RunOverrides& overrides,
                   std::ostream& err);

}  // namespace leap
