#include "leap/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "leap/analysis.hpp"
#include "leap/errors.hpp"

namespace leap {

ConfigError::ConfigError(const std::string& message, int line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line) {}

namespace {

constexpr int kFullWindow = 1 << 20;

int line_of(const YAML::Node& node) {
  const YAML::Mark mark = node.Mark();
  return mark.is_null() ? 0 : mark.line + 1;
}

// A mapping whose keys are checked against the ones actually read.
class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (!node_.IsMap()) throw ConfigError("'" + name_ + "' must be a mapping", line_of(node_));
  }

  int line() const { return line_of(node_); }

  YAML::Node get(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  YAML::Node require(const std::string& key) {
    YAML::Node value = get(key);
    if (!value) throw ConfigError("missing required key '" + name_ + "." + key + "'", line());
    return value;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (YAML::Node value = get(key)) out = scalar<T>(value, key);
  }

  template <typename T>
  T scalar(const YAML::Node& value, const std::string& key) const {
    if (!value.IsScalar())
      throw ConfigError("'" + name_ + "." + key + "' must be a scalar", line_of(value));
    try {
      return value.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("'" + name_ + "." + key + "' has an invalid value '" +
                            value.Scalar() + "'",
                        line_of(value));
    }
  }

  /// Rejects keys that were never asked for; catches typos.
  void finish() const {
    for (const auto& entry : node_) {
      const std::string key = entry.first.as<std::string>();
      if (!seen_.count(key))
        throw ConfigError("unknown key '" + name_ + "." + key + "'", line_of(entry.first));
    }
  }

 private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum parse_choice(const YAML::Node& value, const std::string& key,
                  const std::vector<std::pair<std::string, Enum>>& choices) {
  const std::string text = value.IsScalar() ? value.Scalar() : "";
  for (const auto& [name, choice] : choices)
    if (name == text) return choice;
  std::string allowed;
  for (const auto& [name, choice] : choices) allowed += (allowed.empty() ? "" : ", ") + name;
  throw ConfigError("'" + key + "' must be one of: " + allowed, line_of(value));
}

EnvironmentConfig parse_environment(const YAML::Node& node) {
  Section section(node, "environment");
  EnvironmentConfig env;
  env.kind = parse_choice<EnvironmentKind>(
      section.require("kind"), "environment.kind",
      {{"tiger", EnvironmentKind::kTiger}, {"hidden_object", EnvironmentKind::kHiddenObject}});
  env.horizon = env.kind == EnvironmentKind::kTiger ? 3 : 12;
  section.read("horizon", env.horizon);
  section.read("fully_observed", env.fully_observed);
  if (env.kind == EnvironmentKind::kTiger) {
    section.read("accuracy", env.accuracy);
    section.read("listen_cost", env.listen_cost);
    section.read("correct_reward", env.correct_reward);
    section.read("wrong_penalty", env.wrong_penalty);
  } else {
    section.read("num_locations", env.num_locations);
    section.read("move_cost", env.move_cost);
    section.read("deliver_reward", env.deliver_reward);
    if (YAML::Node sensing = section.get("sensing")) {
      env.sensing = parse_choice<SearchSensing>(
          sensing, "environment.sensing",
          {{"pick", SearchSensing::kPickReveals}, {"arrival", SearchSensing::kArrivalReveals}});
    }
    if (YAML::Node prior = section.get("prior")) {
      if (!prior.IsSequence())
        throw ConfigError("'environment.prior' must be a list of weights", line_of(prior));
      for (const auto& weight : prior) env.prior.push_back(section.scalar<double>(weight, "prior"));
    }
  }
  section.finish();
  return env;
}

std::vector<std::uint64_t> parse_seed_list(const YAML::Node& node) {
  std::vector<std::uint64_t> seeds;
  if (node.IsSequence()) {
    for (const auto& seed : node) {
      try {
        seeds.push_back(seed.as<std::uint64_t>());
      } catch (const YAML::Exception&) {
        throw ConfigError("validation seed must be a non-negative integer", line_of(seed));
      }
    }
    return seeds;
  }
  Section range(node, "leap.validation_seeds");
  const auto first = range.scalar<std::uint64_t>(range.require("first"), "first");
  const auto count = range.scalar<int>(range.require("count"), "count");
  range.finish();
  if (count < 0) throw ConfigError("'validation_seeds.count' must be >= 0", range.line());
  for (int i = 0; i < count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
  return seeds;
}

TeacherType parse_teacher_type(const YAML::Node& node) {
  return parse_choice<TeacherType>(node, "leap.teacher.type",
                                   {{"privileged", TeacherType::kPrivileged},
                                    {"nonprivileged", TeacherType::kNonprivileged},
                                    {"constrained", TeacherType::kConstrained},
                                    {"sampled", TeacherType::kSampled},
                                    {"self", TeacherType::kSelf}});
}

TeacherConfig parse_teacher(const YAML::Node& node) {
  TeacherConfig teacher;
  // A bare scalar is shorthand for {type: <scalar>}.
  if (node.IsScalar()) {
    teacher.type = parse_teacher_type(node);
    return teacher;
  }
  Section section(node, "leap.teacher");
  teacher.type = parse_teacher_type(section.require("type"));
  section.read("delta", teacher.delta);
  section.read("lambda", teacher.lambda);
  section.read("num_samples", teacher.num_samples);
  section.finish();
  return teacher;
}

LeapConfig parse_leap(const YAML::Node& node) {
  Section section(node, "leap");
  LeapConfig config;
  section.read("iterations", config.num_iterations);
  section.read("rollouts_per_iteration", config.rollouts_per_iteration);
  if (YAML::Node rule = section.get("update_rule")) {
    config.update_rule = parse_choice<UpdateRule>(
        rule, "leap.update_rule",
        {{"sft", UpdateRule::kSft}, {"dpo", UpdateRule::kDpo}, {"kto", UpdateRule::kKto}});
  }
  section.read("beta", config.beta);
  section.read("lambda_desirable", config.lambda_desirable);
  section.read("lambda_undesirable", config.lambda_undesirable);
  if (YAML::Node teacher = section.get("teacher")) config.teacher = parse_teacher(teacher);
  if (YAML::Node mode = section.get("correction_mode")) {
    config.mode = parse_choice<CorrectionMode>(
        mode, "leap.correction_mode",
        {{"failed_only", CorrectionMode::kFailedOnly}, {"all_steps", CorrectionMode::kAllSteps}});
  }
  section.read("learning_rate", config.learning_rate);
  section.read("optimization_steps", config.optimization_steps);
  if (YAML::Node window = section.get("truncation_window")) {
    config.truncation_window = window.IsScalar() && window.Scalar() == "full"
                                   ? kFullWindow
                                   : section.scalar<int>(window, "truncation_window");
  }
  config.root_seed = section.scalar<std::uint64_t>(section.require("root_seed"), "root_seed");
  if (YAML::Node seeds = section.get("validation_seeds")) config.validation_seeds = parse_seed_list(seeds);
  section.read("expert_temperature", config.expert_temperature);
  section.finish();
  try {
    config.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), section.line());
  }
  return config;
}

AnalysisOptions parse_analysis(const YAML::Node& node) {
  Section section(node, "analysis");
  AnalysisOptions options;
  section.read("try_exact", options.try_exact);
  section.read("exact_cap", options.exact_cap);
  section.read("evaluation_episodes", options.evaluation_episodes);
  section.read("realizability_episodes", options.realizability_episodes);
  section.finish();
  if (options.evaluation_episodes < 2)
    throw ConfigError("'analysis.evaluation_episodes' must be >= 2", section.line());
  if (options.realizability_episodes < 1)
    throw ConfigError("'analysis.realizability_episodes' must be >= 1", section.line());
  return options;
}

void parse_output(const YAML::Node& node, ExperimentConfig& config) {
  Section section(node, "output");
  if (YAML::Node dir = section.get("directory"))
    config.output_directory = section.scalar<std::string>(dir, "directory");
  if (YAML::Node formats = section.get("formats")) {
    if (!formats.IsSequence())
      throw ConfigError("'output.formats' must be a list", line_of(formats));
    config.write_json = config.write_csv = false;
    for (const auto& format : formats) {
      const auto name = parse_choice<std::string>(format, "output.formats",
                                                  {{"json", "json"}, {"csv", "csv"}});
      (name == "json" ? config.write_json : config.write_csv) = true;
    }
  }
  section.finish();
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw ConfigError("output directory '" + dir.string() + "' cannot be created", 0);
  const std::filesystem::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory '" + dir.string() + "' is not writable", 0);
  }
  std::filesystem::remove(probe, ec);
}

void apply(const RunOverrides& overrides, ExperimentConfig& config) {
  if (overrides.output_directory) config.output_directory = *overrides.output_directory;
  if (overrides.root_seed) config.leap.root_seed = *overrides.root_seed;
  if (config.output_directory.empty())
    throw ConfigError("missing required key 'output.directory' (or pass --out)", 0);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line + 1);
  }
  if (!root.IsMap()) throw ConfigError("config must be a mapping", line_of(root));
  Section section(root, "config");
  ExperimentConfig config;
  int demo_episodes = config.leap.demo_episodes;
  config.environment = parse_environment(section.require("environment"));
  if (YAML::Node demos = section.get("demonstrations")) {
    Section demo(demos, "demonstrations");
    if (YAML::Node sampling = demo.get("sampling")) {
      config.greedy_demonstrations = parse_choice<bool>(
          sampling, "demonstrations.sampling", {{"greedy", true}, {"sampled", false}});
    }
    demo.read("episodes", demo_episodes);
    demo.finish();
  }
  config.leap = parse_leap(section.require("leap"));
  config.leap.demo_episodes = demo_episodes;
  if (demo_episodes < 1)
    throw ConfigError("'demonstrations.episodes' must be >= 1", line_of(root["demonstrations"]));
  if (YAML::Node analysis = section.get("analysis")) config.analysis = parse_analysis(analysis);
  if (YAML::Node output = section.get("output")) parse_output(output, config);
  section.finish();
  try {
    (void)build_environment(config.environment);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid environment: ") + e.what(),
                      line_of(root["environment"]));
  }
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'", 0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

PomdpSpec build_environment(const EnvironmentConfig& config) {
  PomdpSpec spec;
  if (config.kind == EnvironmentKind::kTiger) {
    spec = build_tiger(config.accuracy, config.listen_cost, config.correct_reward,
                       config.wrong_penalty, config.horizon);
  } else {
    std::vector<double> prior = config.prior;
    if (prior.empty()) prior.assign(static_cast<std::size_t>(std::max(config.num_locations, 0)), 1.0);
    spec = build_hidden_object_world(config.num_locations, prior, config.horizon, config.move_cost,
                                     config.deliver_reward, config.sensing);
  }
  return config.fully_observed ? make_fully_observed(spec) : spec;
}

nlohmann::json canonical_json(const ExperimentConfig& config) {
  using nlohmann::json;
  const EnvironmentConfig& env = config.environment;
  json environment = {{"horizon", env.horizon}, {"fully_observed", env.fully_observed}};
  if (env.kind == EnvironmentKind::kTiger) {
    environment["kind"] = "tiger";
    environment["accuracy"] = env.accuracy;
    environment["listen_cost"] = env.listen_cost;
    environment["correct_reward"] = env.correct_reward;
    environment["wrong_penalty"] = env.wrong_penalty;
  } else {
    environment["kind"] = "hidden_object";
    environment["num_locations"] = env.num_locations;
    environment["prior"] = env.prior;
    environment["move_cost"] = env.move_cost;
    environment["deliver_reward"] = env.deliver_reward;
    environment["sensing"] = env.sensing == SearchSensing::kPickReveals ? "pick" : "arrival";
  }
  const LeapConfig& leap = config.leap;
  json leap_json = {
      {"iterations", leap.num_iterations},
      {"rollouts_per_iteration", leap.rollouts_per_iteration},
      {"update_rule", to_string(leap.update_rule)},
      {"beta", leap.beta},
      {"lambda_desirable", leap.lambda_desirable},
      {"lambda_undesirable", leap.lambda_undesirable},
      {"teacher",
       {{"type", to_string(leap.teacher.type)},
        {"delta", leap.teacher.delta},
        {"lambda", leap.teacher.lambda},
        {"num_samples", leap.teacher.num_samples}}},
      {"correction_mode", leap.mode == CorrectionMode::kFailedOnly ? "failed_only" : "all_steps"},
      {"learning_rate", leap.learning_rate},
      {"optimization_steps", leap.optimization_steps},
      {"truncation_window", leap.truncation_window},
      {"root_seed", leap.root_seed},
      {"validation_seeds", leap.validation_seeds},
      {"demo_episodes", leap.demo_episodes},
      {"expert_temperature", leap.expert_temperature},
  };
  json analysis = {{"try_exact", config.analysis.try_exact},
                   {"exact_cap", config.analysis.exact_cap},
                   {"evaluation_episodes", config.analysis.evaluation_episodes},
                   {"realizability_episodes", config.analysis.realizability_episodes}};
  return {{"environment", environment},
          {"demonstrations", {{"sampling", config.greedy_demonstrations ? "greedy" : "sampled"}}},
          {"leap", leap_json},
          {"analysis", analysis}};
}

std::string config_digest(const ExperimentConfig& config) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : canonical_json(config).dump()) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

ExperimentOutcome execute_experiment(const ExperimentConfig& config) {
  const PomdpSpec spec = build_environment(config.environment);
  const ExpertBundle bundle = ExpertBundle::build(spec, config.leap.expert_temperature);
  CorrectionDataset demos;
  demos.demo_records = generate_demonstrations(spec, bundle, config.leap.demo_episodes,
                                               config.leap.root_seed, config.greedy_demonstrations);
  ExperimentOutcome outcome;
  outcome.result = leap_run(spec, config.leap, demos, config.analysis);
  outcome.result.report.config_digest = config_digest(config);
  if (!config.leap.validation_seeds.empty()) {
    outcome.best_iteration =
        select_best(outcome.result.snapshots, spec, config.leap.validation_seeds).iteration;
  }
  return outcome;
}

void write_experiment_outputs(const ExperimentConfig& config, const ExperimentOutcome& outcome) {
  const std::filesystem::path& dir = config.output_directory;
  std::filesystem::create_directories(dir / "snapshots");
  const MetricsReport& report = outcome.result.report;

  std::vector<std::string> files;
  if (config.write_json) {
    write_atomically(dir / "metrics.json", report.to_json().dump(2) + "\n");
    files.push_back("metrics.json");
  }
  if (config.write_csv) {
    write_atomically(dir / "metrics.csv", report.to_csv());
    files.push_back("metrics.csv");
  }
  for (const PolicySnapshot& snapshot : outcome.result.snapshots) {
    const std::string name = "snapshots/pi_" + std::to_string(snapshot.iteration) + ".json";
    nlohmann::json doc = {{"iteration", snapshot.iteration},
                          {"label", snapshot.label},
                          {"policy", snapshot.policy->to_json()}};
    write_atomically(dir / name, doc.dump(2) + "\n");
    files.push_back(name);
  }
  nlohmann::json manifest = {{"artifact_version", kArtifactVersion},
                             {"config_digest", report.config_digest},
                             {"root_seed", config.leap.root_seed},
                             {"spec_name", report.spec_name},
                             {"best_iteration", outcome.best_iteration},
                             {"config", canonical_json(config)},
                             {"files", files}};
  write_atomically(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

// Shared exit-code policy for run and sweep.
template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int run_experiment(const std::filesystem::path& config_path, const RunOverrides& overrides,
                   std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig config = load_experiment_config(config_path);
    apply(overrides, config);
    ensure_writable(config.output_directory);
    write_experiment_outputs(config, execute_experiment(config));
  });
}

std::optional<SweepParameter> parse_sweep_parameter(const std::string& name) {
  if (name == "delta") return SweepParameter::kDelta;
  if (name == "lambda") return SweepParameter::kLambda;
  if (name == "truncation_window") return SweepParameter::kTruncationWindow;
  return std::nullopt;
}

std::string to_string(SweepParameter parameter) {
  switch (parameter) {
    case SweepParameter::kDelta: return "delta";
    case SweepParameter::kLambda: return "lambda";
    case SweepParameter::kTruncationWindow: return "truncation_window";
  }
  return "?";
}

ExperimentConfig with_parameter(const ExperimentConfig& base, SweepParameter parameter,
                                double value) {
  ExperimentConfig config = base;
  TeacherConfig& teacher = config.leap.teacher;
  switch (parameter) {
    case SweepParameter::kDelta:
      if (teacher.type != TeacherType::kConstrained)
        throw ConfigError("a delta sweep needs leap.teacher.type = constrained", 0);
      teacher.delta = value;
      break;
    case SweepParameter::kLambda:
      if (teacher.type != TeacherType::kSampled)
        throw ConfigError("a lambda sweep needs leap.teacher.type = sampled", 0);
      teacher.lambda = value;
      break;
    case SweepParameter::kTruncationWindow:
      if (value != static_cast<double>(static_cast<int>(value)))
        throw ConfigError("truncation_window values must be integers", 0);
      config.leap.truncation_window = static_cast<int>(value);
      break;
  }
  try {
    config.leap.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(to_string(parameter) + " = " + format_number(value) + ": " + e.what(), 0);
  }
  return config;
}

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows) {
  std::string out = "value,final_success,final_J,theorem1_slack,realizability_gap\n";
  for (const TradeoffRow& row : rows) {
    out += format_number(row.value) + "," + format_number(row.final_success) + "," +
           format_number(row.final_J) + "," + format_number(row.theorem1_slack) + "," +
           format_number(row.realizability_gap) + "\n";
  }
  return out;
}

int sweep_tradeoff(const std::filesystem::path& config_path, SweepParameter parameter,
                   const std::vector<double>& values, const RunOverrides& overrides,
                   std::ostream& err) {
  return guarded(err, [&] {
    if (values.empty()) throw ConfigError("--values must not be empty", 0);
    ExperimentConfig base = load_experiment_config(config_path);
    apply(overrides, base);
    // Validate every point before any run starts.
    std::vector<ExperimentConfig> points;
    for (double value : values) {
      ExperimentConfig point = with_parameter(base, parameter, value);
      point.output_directory =
          base.output_directory / (to_string(parameter) + "_" + format_number(value));
      points.push_back(std::move(point));
    }
    ensure_writable(base.output_directory);

    std::vector<TradeoffRow> rows;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const ExperimentOutcome outcome = execute_experiment(points[i]);
      write_experiment_outputs(points[i], outcome);
      const MetricsRow& last = outcome.result.report.rows.back();
      rows.push_back({values[i], last.success_rate, last.J, last.theorem1_slack,
                      last.realizability_gap});
    }
    write_atomically(base.output_directory / "tradeoff.csv", tradeoff_csv(rows));
  });
}

}  // namespace leap
