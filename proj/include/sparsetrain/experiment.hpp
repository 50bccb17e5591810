#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include "sparsetrain/adversarial.hpp"
#include "sparsetrain/trainer.hpp"

namespace sparsetrain {

struct ExperimentConfig {
  std::string name;
  TrainingConfig training;
  std::optional<AttackSpec> attack;
  std::filesystem::path outputs = "out";
  bool emit_compressed = false;
};

// Environment variable that overrides ExperimentConfig::outputs.
inline constexpr const char* kOutputDirEnv = "SPARSETRAIN_OUTPUT_DIR";

// Exit codes of run_experiment.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Throws ConfigError whose message names the offending line.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& config);

// Soft config problems (currently: pruning era extending past the last
// epoch), one human-readable line each.
std::vector<std::string> config_warnings(const ExperimentConfig& config);

struct ExperimentSummary {
  std::string name;
  double final_top1 = 0.0;
  double final_sparsity = 0.0;
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
};

// Trains, then writes metrics.csv, final_checkpoint (+ .json sidecar),
// summary.json and, when configured, robustness.csv and compressed layers.
ExperimentSummary execute_experiment(const ExperimentConfig& config,
                                     const std::filesystem::path& out_dir);

// CLI entry: load, run, report; returns one of the exit codes above.
int run_experiment(const std::filesystem::path& config_path);

ExperimentSummary read_summary(const std::filesystem::path& path);

// Aligned table with top-1 deltas against the first summary.
std::string compare_runs(const std::vector<std::filesystem::path>& summaries);

// Per-layer sparsity report of a checkpoint container (uses the .json
// sidecar for tensor names when present).
std::string inspect_checkpoint(const std::filesystem::path& checkpoint);

}  // namespace sparsetrain
