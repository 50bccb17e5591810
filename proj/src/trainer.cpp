#include "sparsetrain/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "sparsetrain/errors.hpp"
#include "sparsetrain/masking.hpp"

namespace sparsetrain {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("metrics CSV line " + std::to_string(line) +
                      ": bad number \"" + std::string(s) + "\"");
  }
  return v;
}

PruneMask conv_layer_mask(const ConvWeight& w, const PruningSchedule& sched,
                          double threshold) {
  // A 1x1 kernel is a single weight, so only whole-kernel pruning applies.
  // A window cap counts weights per kernel and means nothing here; only a
  // CK schedule's cap (kernels per input channel) carries over.
  if (w.shape().kernel_size() == 1) {
    const bool ck_cap = sched.granularity == Granularity::CK;
    return ck_mask(w, threshold, ck_cap ? sched.max_non_zero : std::nullopt);
  }
  switch (sched.granularity) {
    case Granularity::Window:
      return window_mask(w, threshold, sched.max_non_zero);
    case Granularity::CK:
      return ck_mask(w, threshold, sched.max_non_zero);
    case Granularity::Combined:
      return combined_mask(w, threshold, sched.window_fraction,
                           sched.max_non_zero);
    default:
      break;
  }
  return PruneMask::ones(w.dims());
}

PruneMask fc_layer_mask(const FCWeight& w, Granularity g, std::size_t block,
                        double threshold) {
  if (g == Granularity::FCBlock) return fc_block_mask(w, threshold, block);
  return fc_fine_mask(w, threshold);
}

}  // namespace

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor < 1.0)) {
    throw ConfigError("lr_drop_factor must lie in (0, 1)");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  for (int e : lr_drop_epochs) {
    if (e < 0) throw ConfigError("lr_drop_epochs must be >= 0");
  }
  schedule.validate();
  if (dataset.n_classes < 1 || dataset.n_train < 1 || dataset.n_val < 1) {
    throw ConfigError("dataset counts must be >= 1");
  }
  if (dataset.image_size < 3) throw ConfigError("image_size must be >= 3");
  if (model.conv3x3_channels < 1 || model.conv1x1_channels < 1) {
    throw ConfigError("model channel counts must be >= 1");
  }
  if (model.pool < 1 || (dataset.image_size - 2) % model.pool != 0) {
    throw ConfigError("model pool must divide image_size - 2");
  }
}

void regenerate_masks(ToyModel& model, const PruningSchedule& sched,
                      double threshold) {
  auto& layers = model.layers();
  const auto last_conv = model.last_conv_layer();
  bool last_conv_changed = false;

  if (is_conv_granularity(sched.granularity)) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto* conv = std::get_if<ConvLayer>(&layers[i]);
      if (!conv) continue;
      PruneMask next = monotone_and(
          conv->mask, conv_layer_mask(conv->weight, sched, threshold));
      if (last_conv && i == *last_conv && next != conv->mask) {
        last_conv_changed = true;
      }
      conv->mask = std::move(next);
    }
  }

  auto& fc = std::get<FCLayer>(layers[model.fc_layer()]);
  std::optional<Granularity> fc_scheme = sched.fc_granularity;
  if (!is_conv_granularity(sched.granularity)) fc_scheme = sched.granularity;

  if (fc_scheme || last_conv_changed) {
    PruneMask candidate = fc_scheme ? fc_layer_mask(fc.weight, *fc_scheme,
                                                    sched.fc_block, threshold)
                                    : PruneMask::ones(fc.weight.dims());
    if (last_conv) {
      const auto& conv = std::get<ConvLayer>(layers[*last_conv]);
      const std::size_t K = conv.weight.shape().out_channels;
      const std::size_t rows = fc.weight.rows();
      if (rows % K != 0) {
        throw ContractError("FC rows are not a multiple of the last conv's K");
      }
      candidate = monotone_and(
          candidate, conv_driven_fc_elimination(conv.mask, fc.weight, rows / K));
    }
    // Coverage repair may only revive positions that are still alive, so
    // the previous mask is folded in last.
    fc.mask = monotone_and(fc.mask, ensure_column_coverage(candidate, fc.weight));
  }
  model.apply_masks();
}

double evaluate_top1(const ToyModel& model, const Dataset& data,
                     std::size_t batch_size) {
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = predict(forward(model, data.batch(idx)), model.n_classes());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == data.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

ToyModel initial_model(const TrainingConfig& config, std::mt19937_64& rng) {
  const auto& d = config.dataset;
  return make_toy_model(config.model,
                        ActShape{d.channels, d.image_size, d.image_size},
                        d.n_classes, rng);
}

namespace {

TrainResult train_with_rng(ToyModel model, const TrainingConfig& config,
                           const SyntheticData& data, const TrainHooks& hooks,
                           std::mt19937_64& rng) {
  config.validate();
  if (data.train.shape != model.input_shape() ||
      data.train.n_classes != model.n_classes()) {
    throw ConfigError("dataset does not match the model input/output shape");
  }
  const auto& sched = config.schedule;
  TrainResult result;
  double lr = config.lr0;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    lr *= std::pow(config.lr_drop_factor,
                   static_cast<double>(std::count(config.lr_drop_epochs.begin(),
                                                  config.lr_drop_epochs.end(),
                                                  epoch)));
    const Phase phase = phase_at(sched, epoch);
    const double threshold = threshold_at(sched, epoch);
    const SgdParams sgd{lr, config.momentum, config.weight_decay};

    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = data.train.batch(idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        labels[i] = data.train.labels[idx[i]];
      }
      const Gradients grads = backward(model, batch, labels);
      if (!std::isfinite(grads.loss)) {
        throw NumericalError("non-finite loss at epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      sgd_step(model, grads, sgd);
      if (phase == Phase::Pruning) regenerate_masks(model, sched, threshold);
      loss_sum += grads.loss;
      if (hooks.after_batch) hooks.after_batch(model, epoch, batches);
      ++batches;
    }
    // Last evaluation of the era happens at the final target, so the frozen
    // mask carries s_f.
    if (phase == Phase::Pruning && epoch == sched.last_era_epoch()) {
      regenerate_masks(model, sched, threshold_at(sched, sched.freeze_epoch()));
    }
    for (const auto& w : model.prunable_weights()) {
      if (!all_finite(w)) {
        throw NumericalError("non-finite weights after epoch " +
                             std::to_string(epoch));
      }
    }

    MetricsRow row;
    row.epoch = epoch;
    row.top1 = evaluate_top1(model, data.val);
    row.loss = loss_sum / static_cast<double>(batches);
    row.sparsity = model.sparsity();
    row.lr = lr;
    row.phase = phase;
    result.metrics.push_back(row);
    if (hooks.after_epoch) hooks.after_epoch(model, row);
  }
  std::ostringstream rng_state;
  rng_state << rng;
  result.rng_state = rng_state.str();
  result.final_lr = lr;
  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult train(ToyModel model, const TrainingConfig& config,
                  const SyntheticData& data, const TrainHooks& hooks) {
  std::mt19937_64 rng(config.seed);
  return train_with_rng(std::move(model), config, data, hooks, rng);
}

TrainResult train(const TrainingConfig& config, const SyntheticData& data,
                  const TrainHooks& hooks) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ToyModel model = initial_model(config, rng);
  return train_with_rng(std::move(model), config, data, hooks, rng);
}

TrainResult train(const TrainingConfig& config, const TrainHooks& hooks) {
  config.validate();
  return train(config, make_synthetic_dataset(config.dataset), hooks);
}

// ------------------------------------------------------------- CSV

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "epoch,top1,loss,sparsity,lr,phase\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << format_double(r.top1) << ','
       << format_double(r.loss) << ',' << format_double(r.sparsity) << ','
       << format_double(r.lr) << ',' << to_string(r.phase) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "epoch,top1,loss,sparsity,lr,phase") {
    throw FormatError("metrics CSV: missing or unexpected header");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 6) {
      throw FormatError("metrics CSV line " + std::to_string(lineno) +
                        ": expected 6 fields");
    }
    MetricsRow r;
    int epoch = 0;
    auto res = std::from_chars(f[0].data(), f[0].data() + f[0].size(), epoch);
    if (res.ec != std::errc() || res.ptr != f[0].data() + f[0].size()) {
      throw FormatError("metrics CSV line " + std::to_string(lineno) +
                        ": bad epoch");
    }
    r.epoch = epoch;
    r.top1 = parse_double(f[1], lineno);
    r.loss = parse_double(f[2], lineno);
    r.sparsity = parse_double(f[3], lineno);
    r.lr = parse_double(f[4], lineno);
    r.phase = parse_phase(f[5]);
    rows.push_back(r);
  }
  return rows;
}

// ------------------------------------------------------- checkpoints

std::vector<NamedTensor> checkpoint_tensors(const ToyModel& model) {
  std::vector<NamedTensor> out;
  for (auto i : model.prunable_layers()) {
    const std::string name = model.layer_name(i);
    auto add = [&](const auto& l) {
      const Dims dims = l.weight.dims();
      out.push_back({name + ".weight", "weight", l.weight.to_tensor()});
      out.push_back({name + ".mask", "mask", l.mask.to_tensor()});
      out.push_back({name + ".weight_momentum", "momentum",
                     Tensor(dims, l.weight_momentum)});
      out.push_back({name + ".bias", "bias", Tensor({l.bias.size()}, l.bias)});
      out.push_back({name + ".bias_momentum", "momentum",
                     Tensor({l.bias.size()}, l.bias_momentum)});
    };
    if (const auto* c = std::get_if<ConvLayer>(&model.layers()[i])) add(*c);
    if (const auto* f = std::get_if<FCLayer>(&model.layers()[i])) add(*f);
  }
  return out;
}

void restore_checkpoint_tensors(ToyModel& model,
                                const std::vector<Tensor>& tensors) {
  const auto prunable = model.prunable_layers();
  if (tensors.size() != prunable.size() * 5) {
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, model needs " +
                      std::to_string(prunable.size() * 5));
  }
  std::size_t t = 0;
  auto take = [&](const Dims& dims) -> const Tensor& {
    const Tensor& x = tensors[t++];
    if (x.dims() != dims) {
      throw FormatError("checkpoint tensor " + std::to_string(t - 1) +
                        " has shape " + dims_to_string(x.dims()) +
                        ", expected " + dims_to_string(dims));
    }
    return x;
  };
  auto to_vec = [](const Tensor& x) {
    return std::vector<double>(x.values().begin(), x.values().end());
  };
  for (auto i : prunable) {
    auto restore = [&](auto& l) {
      const Dims dims = l.weight.dims();
      const Dims bdims{l.bias.size()};
      const Tensor& w = take(dims);
      const Tensor& m = take(dims);
      const Tensor& wm = take(dims);
      const Tensor& b = take(bdims);
      const Tensor& bm = take(bdims);
      std::copy(w.values().begin(), w.values().end(), l.weight.values().begin());
      l.mask = PruneMask::from_tensor(m);
      l.weight_momentum = to_vec(wm);
      l.bias = to_vec(b);
      l.bias_momentum = to_vec(bm);
    };
    if (auto* c = std::get_if<ConvLayer>(&model.layers()[i])) restore(*c);
    if (auto* f = std::get_if<FCLayer>(&model.layers()[i])) restore(*f);
  }
}

}  // namespace sparsetrain
