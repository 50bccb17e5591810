// Experiment runner: run <config.json> | compare <summary.json>... |
// inspect <checkpoint>
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "sparsetrain/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Structured sparse training experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "train, compress and attack per config");
  run->add_option("config", config_path, "experiment config (JSON)")->required();

  std::vector<std::string> summaries;
  auto* compare =
      app.add_subcommand("compare", "tabulate summary.json files vs the first");
  compare->add_option("summaries", summaries, "summary.json files")
      ->required()
      ->expected(1, -1);

  std::string checkpoint;
  auto* inspect = app.add_subcommand("inspect", "per-layer sparsity of a checkpoint");
  inspect->add_option("checkpoint", checkpoint, "checkpoint container")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sparsetrain::kExitConfig;
  }

  try {
    if (*run) return sparsetrain::run_experiment(config_path);
    if (*compare) {
      std::vector<std::filesystem::path> paths(summaries.begin(), summaries.end());
      std::cout << sparsetrain::compare_runs(paths);
      return sparsetrain::kExitOk;
    }
    if (*inspect) {
      std::cout << sparsetrain::inspect_checkpoint(checkpoint);
      return sparsetrain::kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sparsetrain::kExitFailure;
  }
  return sparsetrain::kExitFailure;
}
