#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "sparsetrain/dataset.hpp"
#include "sparsetrain/model.hpp"
#include "sparsetrain/schedule.hpp"

namespace sparsetrain {

struct TrainingConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr0 = 0.05;
  std::vector<int> lr_drop_epochs;
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  PruningSchedule schedule;
  SyntheticSpec dataset;
  ModelSpec model;

  void validate() const;
};

struct MetricsRow {
  int epoch = 0;
  double top1 = 0.0;
  double loss = 0.0;  // mean training loss over the epoch
  double sparsity = 0.0;
  double lr = 0.0;
  Phase phase = Phase::Dense;

  bool operator==(const MetricsRow&) const = default;
};

struct TrainHooks {
  std::function<void(const ToyModel&, int epoch, std::size_t batch)> after_batch;
  std::function<void(const ToyModel&, const MetricsRow&)> after_epoch;
};

struct TrainResult {
  ToyModel model;
  std::vector<MetricsRow> metrics;
  std::string rng_state;
  double final_lr = 0.0;
};

// Regenerates every layer mask at `threshold` with the schedule's
// granularities, folds it into the previous mask with monotone_and, runs
// conv-driven FC elimination plus column coverage, and re-applies the masks.
void regenerate_masks(ToyModel& model, const PruningSchedule& sched,
                      double threshold);

double evaluate_top1(const ToyModel& model, const Dataset& data,
                     std::size_t batch_size = 256);

// Sparse training loop: dense epochs, per-batch mask re-evaluation during
// the pruning era, fixed masks afterwards. Throws NumericalError on a
// non-finite loss.
TrainResult train(ToyModel model, const TrainingConfig& config,
                  const SyntheticData& data, const TrainHooks& hooks = {});

// Builds the seeded model from the config, then trains on `data`.
TrainResult train(const TrainingConfig& config, const SyntheticData& data,
                  const TrainHooks& hooks = {});

// Same, generating the dataset from config.dataset.
TrainResult train(const TrainingConfig& config, const TrainHooks& hooks = {});

ToyModel initial_model(const TrainingConfig& config, std::mt19937_64& rng);

// Metrics CSV: header `epoch,top1,loss,sparsity,lr,phase`.
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& is);

// Checkpoint tensors per prunable layer, in order: weight, mask,
// weight_momentum, bias, bias_momentum.
struct NamedTensor {
  std::string name;
  std::string role;
  Tensor tensor;
};
std::vector<NamedTensor> checkpoint_tensors(const ToyModel& model);
// Restores weights, masks and momentum into a model of the same topology.
void restore_checkpoint_tensors(ToyModel& model,
                                const std::vector<Tensor>& tensors);

}  // namespace sparsetrain
