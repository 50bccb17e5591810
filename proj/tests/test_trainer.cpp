#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sparsetrain/errors.hpp"
#include "sparsetrain/masking.hpp"
#include "sparsetrain/trainer.hpp"

using namespace sparsetrain;

namespace {

TrainingConfig quick_config() {
  TrainingConfig c;
  c.epochs = 8;
  c.batch_size = 32;
  c.lr0 = 0.05;
  c.seed = 3;
  c.dataset.n_train = 600;
  c.dataset.n_val = 200;
  c.model = {8, 8, 2};
  return c;
}

const PruneMask& mask_of(const ToyModel& m, std::size_t i) {
  if (auto* c = std::get_if<ConvLayer>(&m.layers()[i])) return c->mask;
  return std::get<FCLayer>(m.layers()[i]).mask;
}

std::vector<PruneMask> all_masks(const ToyModel& m) {
  std::vector<PruneMask> out;
  for (auto i : m.prunable_layers()) out.push_back(mask_of(m, i));
  return out;
}

}  // namespace

TEST(Dataset, DeterministicAndBalanced) {
  SyntheticSpec s;
  s.n_train = 300;
  s.n_val = 100;
  const auto a = make_synthetic_dataset(s);
  const auto b = make_synthetic_dataset(s);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.val.labels, b.val.labels);
  std::vector<int> counts(s.n_classes, 0);
  for (int l : a.train.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) EXPECT_EQ(n, 30);
  for (double v : a.train.images) {
    EXPECT_GE(v, kPixelMin);
    EXPECT_LE(v, kPixelMax);
  }
  s.seed = 2;
  EXPECT_NE(make_synthetic_dataset(s).train.images, a.train.images);
}

TEST(Dataset, SingleClassIsTrivial) {
  auto c = quick_config();
  c.epochs = 1;
  c.dataset.n_classes = 1;
  const auto r = train(c);
  EXPECT_EQ(r.metrics.back().top1, 1.0);
}

TEST(Dataset, ScrambledLabelsGiveChance) {
  auto c = quick_config();
  c.epochs = 4;
  auto data = make_synthetic_dataset(c.dataset);
  std::mt19937_64 rng(99);
  std::shuffle(data.train.labels.begin(), data.train.labels.end(), rng);
  const auto r = train(c, data);
  EXPECT_LT(r.metrics.back().top1, 0.25);
}

TEST(Trainer, DenseRunLearns) {
  const auto r = train(quick_config());
  ASSERT_EQ(r.metrics.size(), 8u);
  EXPECT_GT(r.metrics.back().top1, 0.8);
  EXPECT_LT(r.metrics.back().sparsity, 0.01);
}

TEST(Trainer, ZeroFinalSparsityMatchesDense) {
  auto dense = quick_config();
  dense.epochs = 3;
  auto pruned = dense;
  pruned.schedule.final_sparsity = 0.0;
  pruned.schedule.first_epoch = 1;
  pruned.schedule.era_length = 1;
  pruned.schedule.granularity = Granularity::Combined;
  const auto a = train(dense);
  const auto b = train(pruned);
  for (std::size_t e = 0; e < a.metrics.size(); ++e) {
    EXPECT_EQ(a.metrics[e].top1, b.metrics[e].top1);
    EXPECT_EQ(a.metrics[e].loss, b.metrics[e].loss);
  }
  EXPECT_EQ(a.model.prunable_weights().size(), b.model.prunable_weights().size());
  for (std::size_t i = 0; i < a.model.prunable_weights().size(); ++i) {
    const auto x = a.model.prunable_weights()[i];
    const auto y = b.model.prunable_weights()[i];
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST(Trainer, ReachesTargetAndFreezes) {
  auto c = quick_config();
  c.epochs = 8;
  c.schedule.final_sparsity = 0.6;
  c.schedule.first_epoch = 2;
  c.schedule.era_length = 4;
  c.schedule.granularity = Granularity::CK;
  c.schedule.fc_granularity = Granularity::FCFine;
  std::vector<PruneMask> frozen;
  bool frozen_stable = true;
  TrainHooks hooks;
  hooks.after_epoch = [&](const ToyModel& m, const MetricsRow& row) {
    if (row.epoch == c.schedule.last_era_epoch()) frozen = all_masks(m);
    if (row.epoch > c.schedule.last_era_epoch()) frozen_stable &= all_masks(m) == frozen;
  };
  const auto r = train(c, hooks);
  EXPECT_TRUE(frozen_stable);
  const double final = r.metrics.back().sparsity;
  // Column coverage may hand back at most one FC weight per class.
  EXPECT_LE(final, 0.6 + 1e-12);
  EXPECT_GE(final, 0.6 - 10.0 / 1000.0);
  for (int e = 5; e < 8; ++e) EXPECT_EQ(r.metrics[e].sparsity, final);
  double prev = 0.0;
  for (const auto& row : r.metrics) {
    EXPECT_GE(row.sparsity, prev);
    prev = row.sparsity;
  }
  EXPECT_EQ(r.metrics[1].phase, Phase::Dense);
  EXPECT_EQ(r.metrics[2].phase, Phase::Pruning);
  EXPECT_EQ(r.metrics[6].phase, Phase::Frozen);
}

TEST(Trainer, Deterministic) {
  auto c = quick_config();
  c.epochs = 4;
  c.schedule.final_sparsity = 0.5;
  c.schedule.first_epoch = 1;
  c.schedule.era_length = 2;
  c.schedule.granularity = Granularity::Window;
  const auto a = train(c);
  const auto b = train(c);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.rng_state, b.rng_state);
  const auto ta = checkpoint_tensors(a.model);
  const auto tb = checkpoint_tensors(b.model);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i].tensor, tb[i].tensor);
}

TEST(Trainer, LearningRateDrops) {
  auto c = quick_config();
  c.epochs = 4;
  c.lr0 = 0.04;
  c.lr_drop_epochs = {1, 3};
  const auto r = train(c);
  EXPECT_DOUBLE_EQ(r.metrics[0].lr, 0.04);
  EXPECT_DOUBLE_EQ(r.metrics[1].lr, 0.004);
  EXPECT_DOUBLE_EQ(r.metrics[2].lr, 0.004);
  EXPECT_NEAR(r.metrics[3].lr, 0.0004, 1e-18);
}

TEST(Trainer, DivergenceIsNumericalError) {
  auto c = quick_config();
  c.lr0 = 1e6;
  c.momentum = 0.0;
  EXPECT_THROW(train(c), NumericalError);
}

TEST(Trainer, ConfigValidation) {
  auto c = quick_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick_config();
  c.lr_drop_factor = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick_config();
  c.lr0 = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RegenerateMasks, OneByOneUsesCkAndFcIsCovered) {
  std::mt19937_64 rng(4);
  auto m = make_toy_model({8, 8, 2}, {3, 8, 8}, 10, rng);
  PruningSchedule s;
  s.final_sparsity = 0.9;
  s.granularity = Granularity::Window;
  regenerate_masks(m, s, 0.9);
  const auto& c1 = std::get<ConvLayer>(m.layers()[1]);
  // 1x1 kernels are single weights, so CK prunes floor(64 * 0.9) of them.
  EXPECT_EQ(c1.mask.count_pruned(), 57u);
  EXPECT_TRUE(uncovered_columns(std::get<FCLayer>(m.layers()[4]).mask).empty());
}

TEST(RegenerateMasks, WindowCapSkipsOneByOne) {
  std::mt19937_64 rng(4);
  auto m = make_toy_model({8, 8, 2}, {3, 8, 8}, 10, rng);
  PruningSchedule s;
  s.final_sparsity = 0.5;
  s.granularity = Granularity::Window;
  s.max_non_zero = 2;
  auto ck = m;
  regenerate_masks(m, s, 0.5);
  EXPECT_EQ(std::get<ConvLayer>(m.layers()[1]).mask.count_pruned(), 32u);
  // The 3x3 layer keeps at most two weights per kernel.
  EXPECT_EQ(std::get<ConvLayer>(m.layers()[0]).mask.count_kept(), 8u * 3 * 2);

  // Under CK the cap limits surviving kernels per input channel.
  s.granularity = Granularity::CK;
  regenerate_masks(ck, s, 0.5);
  EXPECT_EQ(std::get<ConvLayer>(ck.layers()[1]).mask.count_kept(), 8u * 2);
}

TEST(RegenerateMasks, DeadChannelsEliminateFcRows) {
  std::mt19937_64 rng(5);
  auto m = make_toy_model({4, 4, 2}, {3, 6, 6}, 3, rng);
  auto& c1 = std::get<ConvLayer>(m.layers()[1]);
  // Output channel 2 of the 1x1 conv loses every kernel.
  std::vector<std::uint8_t> bits(16, 1);
  for (std::size_t c = 0; c < 4; ++c) bits[2 * 4 + c] = 0;
  c1.mask = PruneMask(c1.weight.dims(), bits);
  m.apply_masks();
  PruningSchedule s;
  s.final_sparsity = 0.0;
  s.granularity = Granularity::CK;
  s.fc_granularity = Granularity::FCFine;
  regenerate_masks(m, s, 0.0);
  const auto& fc = std::get<FCLayer>(m.layers()[4]);
  const std::size_t npc = 4;  // 2x2 pooled map per channel
  for (std::size_t i = 0; i < fc.weight.rows(); ++i) {
    for (std::size_t j = 0; j < fc.weight.cols(); ++j) {
      const bool dead = i / npc == 2;
      EXPECT_EQ(fc.mask[i * fc.weight.cols() + j], dead ? 0 : 1);
      if (dead) EXPECT_EQ(fc.weight.at(i, j), 0.0);
    }
  }
}

TEST(RegenerateMasks, ZerosAccumulate) {
  std::mt19937_64 rng(6);
  auto m = make_toy_model({8, 8, 2}, {3, 8, 8}, 10, rng);
  PruningSchedule s;
  s.final_sparsity = 0.8;
  s.granularity = Granularity::Combined;
  s.fc_granularity = Granularity::FCBlock;
  auto prev = all_masks(m);
  for (double t : {0.1, 0.3, 0.3, 0.6, 0.8}) {
    // Perturb weights so the ranking changes between evaluations.
    for (auto i : m.prunable_layers()) {
      std::visit(
          [&](auto& l) {
            if constexpr (requires { l.mask; }) {
              std::normal_distribution<double> d;
              for (auto& v : l.weight.values()) v += 0.5 * d(rng);
            }
          },
          m.layers()[i]);
    }
    m.apply_masks();
    regenerate_masks(m, s, t);
    const auto now = all_masks(m);
    for (std::size_t k = 0; k < now.size(); ++k) EXPECT_EQ(monotone_and(prev[k], now[k]), now[k]);
    prev = now;
  }
}

TEST(MetricsCsv, RoundTrip) {
  std::vector<MetricsRow> rows{{0, 0.5, 2.302585092994046, 0.0, 0.05, Phase::Dense},
                               {1, 0.875, 0.1 + 0.2, 0.6000000000000001, 0.005,
                                Phase::Pruning},
                               {2, 1.0, 1e-300, 0.6, 5e-4, Phase::Frozen}};
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  EXPECT_EQ(ss.str().substr(0, 36), "epoch,top1,loss,sparsity,lr,phase\n0,");
  EXPECT_EQ(read_metrics_csv(ss), rows);
}

TEST(MetricsCsv, RejectsGarbage) {
  std::stringstream bad("epoch,top1\n1,2\n");
  EXPECT_THROW(read_metrics_csv(bad), FormatError);
  std::stringstream bad2("epoch,top1,loss,sparsity,lr,phase\n0,x,1,0,0.1,dense\n");
  EXPECT_THROW(read_metrics_csv(bad2), FormatError);
}

TEST(Checkpoint, RestoreReproducesModel) {
  auto c = quick_config();
  c.epochs = 2;
  c.schedule.final_sparsity = 0.5;
  c.schedule.first_epoch = 0;
  c.schedule.era_length = 1;
  const auto r = train(c);
  std::vector<Tensor> tensors;
  for (const auto& t : checkpoint_tensors(r.model)) tensors.push_back(t.tensor);
  std::mt19937_64 rng(123);
  auto fresh = initial_model(c, rng);
  restore_checkpoint_tensors(fresh, tensors);
  const auto again = checkpoint_tensors(fresh);
  for (std::size_t i = 0; i < tensors.size(); ++i) EXPECT_EQ(again[i].tensor, tensors[i]);
  tensors.pop_back();
  EXPECT_THROW(restore_checkpoint_tensors(fresh, tensors), FormatError);
}
