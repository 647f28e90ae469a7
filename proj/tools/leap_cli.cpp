#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "leap/experiment.hpp"

namespace {

std::optional<std::vector<double>> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (values.empty()) return std::nullopt;
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative imitation with privileged correction: runs and sweeps"};
  app.require_subcommand(1);

  std::string out_dir;
  std::uint64_t seed = 0;
  std::string config_path;
  std::string param;
  std::string values_text;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "YAML experiment config")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides output.directory)");
    sub->add_option("--seed", seed, "Root seed (overrides leap.root_seed)");
  };

  CLI::App* run = app.add_subcommand("run", "Run one experiment");
  add_common(run);
  CLI::App* sweep = app.add_subcommand("sweep", "Run one experiment per parameter value");
  add_common(sweep);
  sweep->add_option("--param", param, "delta, lambda or truncation_window")->required();
  sweep->add_option("--values", values_text, "Comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  leap::RunOverrides overrides;
  if (!out_dir.empty()) overrides.output_directory = out_dir;
  if (run->count("--seed") || sweep->count("--seed")) overrides.root_seed = seed;

  if (*run) return leap::run_experiment(config_path, overrides, std::cerr);

  const auto parameter = leap::parse_sweep_parameter(param);
  if (!parameter) {
    std::cerr << "config error: unknown sweep parameter '" << param << "'\n";
    return 2;
  }
  const auto values = parse_values(values_text);
  if (!values) {
    std::cerr << "config error: --values must be a comma-separated list of numbers\n";
    return 2;
  }
  return leap::sweep_tradeoff(config_path, *parameter, *values, overrides, std::cerr);
}
