#include "sparsetrain/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "sparsetrain/checkpoint.hpp"
#include "sparsetrain/compressed.hpp"
#include "sparsetrain/errors.hpp"

namespace sparsetrain {

using nlohmann::json;

namespace {

// 1-based line of a dotted key path ("training.schedule.s_f"), found by
// locating each component after the previous one; 0 if absent. A missing
// leaf falls back to the line of its deepest present parent.
std::size_t line_of_key(std::string_view text, const std::string& path) {
  if (path.empty()) return 0;
  std::size_t pos = 0;
  std::size_t found = std::string_view::npos;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = std::min(path.find('.', start), path.size());
    const std::string quoted = "\"" + path.substr(start, dot - start) + "\"";
    const auto at = text.find(quoted, pos);
    if (at == std::string_view::npos) break;
    found = at;
    pos = at + quoted.size();
    start = dot + 1;
  }
  if (found == std::string_view::npos) return 0;
  return 1 + static_cast<std::size_t>(std::count(
                 text.begin(), text.begin() + static_cast<std::ptrdiff_t>(found), '\n'));
}

// Walks one JSON object, recording which keys were consumed so unknown keys
// can be reported, and turning type errors into line-referenced
// diagnostics.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path, std::string_view text)
      : obj_(obj), path_(std::move(path)), text_(text) {
    if (!obj_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    const std::size_t line = line_of_key(text_, key);
    std::string where = line ? "line " + std::to_string(line) + ": " : "";
    throw ConfigError(where + "'" + key + "': " + why);
  }

  std::string child_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void mark(const std::string& key) { seen_.insert(key); }

  bool has(const std::string& key) const {
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) fail(child_path(key), "missing required field");
    return obj_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const json& v = raw(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(child_path(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(child_path(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && v.get<long long>() < 0) {
            fail(child_path(key), "expected a nonnegative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(child_path(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(child_path(key), "expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      fail(child_path(key), e.what());
    }
  }

  template <class T>
  void optional(const std::string& key, T& out) {
    seen_.insert(key);
    if (has(key)) out = get<T>(key);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) fail(child_path(key), "unknown field");
    }
  }

  std::string_view text() const { return text_; }

 private:
  const json& obj_;
  std::string path_;
  std::string_view text_;
  std::set<std::string> seen_;
};

PruningSchedule parse_schedule(ObjectReader& r) {
  PruningSchedule s;
  r.optional("s_i", s.initial_sparsity);
  s.final_sparsity = r.get<double>("s_f");
  s.first_epoch = r.get<int>("e_i");
  s.era_length = r.get<int>("l_p");
  r.optional("r", s.exponent);
  const std::string g = r.get<std::string>("granularity");
  try {
    s.granularity = parse_granularity(g);
  } catch (const ConfigError& e) {
    r.fail(r.child_path("granularity"), e.what());
  }
  r.mark("max_non_zero");
  if (r.has("max_non_zero")) s.max_non_zero = r.get<std::size_t>("max_non_zero");
  r.optional("window_fraction", s.window_fraction);
  r.mark("fc_granularity");
  if (r.has("fc_granularity")) {
    try {
      s.fc_granularity = parse_granularity(r.get<std::string>("fc_granularity"));
    } catch (const ConfigError& e) {
      r.fail(r.child_path("fc_granularity"), e.what());
    }
  }
  r.optional("fc_block", s.fc_block);
  r.reject_unknown();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    r.fail(r.child_path("s_f"), e.what());
  }
  return s;
}

SyntheticSpec parse_dataset(ObjectReader& r) {
  SyntheticSpec d;
  r.optional("n_train", d.n_train);
  r.optional("n_val", d.n_val);
  r.optional("image_size", d.image_size);
  r.optional("channels", d.channels);
  r.optional("n_classes", d.n_classes);
  r.optional("seed", d.seed);
  r.optional("noise", d.noise);
  r.reject_unknown();
  return d;
}

ModelSpec parse_model(ObjectReader& r) {
  ModelSpec m;
  r.optional("conv3x3_channels", m.conv3x3_channels);
  r.optional("conv1x1_channels", m.conv1x1_channels);
  r.optional("pool", m.pool);
  r.reject_unknown();
  return m;
}

TrainingConfig parse_training(ObjectReader& r) {
  TrainingConfig t;
  t.epochs = r.get<int>("epochs");
  r.optional("batch_size", t.batch_size);
  r.optional("lr0", t.lr0);
  r.optional("lr_drop_epochs", t.lr_drop_epochs);
  r.optional("lr_drop_factor", t.lr_drop_factor);
  r.optional("momentum", t.momentum);
  r.optional("weight_decay", t.weight_decay);
  r.optional("seed", t.seed);
  {
    ObjectReader s(r.raw("schedule"), r.child_path("schedule"), r.text());
    t.schedule = parse_schedule(s);
  }
  r.mark("dataset");
  r.mark("model");
  if (r.has("dataset")) {
    ObjectReader d(r.raw("dataset"), r.child_path("dataset"), r.text());
    t.dataset = parse_dataset(d);
  }
  if (r.has("model")) {
    ObjectReader m(r.raw("model"), r.child_path("model"), r.text());
    t.model = parse_model(m);
  }
  r.reject_unknown();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    r.fail(r.child_path("epochs"), e.what());
  }
  return t;
}

AttackSpec parse_attack(ObjectReader& r) {
  AttackSpec a;
  r.optional("epsilons", a.epsilons);
  if (r.has("clamp_range")) {
    const auto range = r.get<std::vector<double>>("clamp_range");
    if (range.size() != 2) {
      r.fail(r.child_path("clamp_range"), "expected [lo, hi]");
    }
    a.clamp_lo = range[0];
    a.clamp_hi = range[1];
  }
  r.reject_unknown();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    r.fail(r.child_path("epsilons"), e.what());
  }
  return a;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
    const auto prefix = text.substr(0, byte);
    const std::size_t line =
        1 + static_cast<std::size_t>(std::count(prefix.begin(), prefix.end(), '\n'));
    throw ConfigError("line " + std::to_string(line) + ": JSON syntax error: " +
                      e.what());
  }
  ObjectReader root(doc, "", text);
  ExperimentConfig cfg;
  cfg.name = root.get<std::string>("name");
  if (cfg.name.empty()) root.fail("name", "must be nonempty");
  {
    ObjectReader t(root.raw("training"), "training", text);
    cfg.training = parse_training(t);
  }
  root.mark("attack");
  if (root.has("attack")) {
    ObjectReader a(root.raw("attack"), "attack", text);
    cfg.attack = parse_attack(a);
  }
  std::string outputs = cfg.outputs.string();
  root.optional("outputs", outputs);
  cfg.outputs = outputs;
  root.optional("emit_compressed", cfg.emit_compressed);
  root.reject_unknown();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment_config(text);
}

json to_json(const ExperimentConfig& c) {
  const auto& t = c.training;
  const auto& s = t.schedule;
  json schedule = {
      {"s_i", s.initial_sparsity},
      {"s_f", s.final_sparsity},
      {"e_i", s.first_epoch},
      {"l_p", s.era_length},
      {"r", s.exponent},
      {"granularity", std::string(to_string(s.granularity))},
      {"max_non_zero", s.max_non_zero ? json(*s.max_non_zero) : json(nullptr)},
      {"window_fraction", s.window_fraction},
      {"fc_granularity", s.fc_granularity
                             ? json(std::string(to_string(*s.fc_granularity)))
                             : json(nullptr)},
      {"fc_block", s.fc_block},
  };
  json training = {
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"lr0", t.lr0},
      {"lr_drop_epochs", t.lr_drop_epochs},
      {"lr_drop_factor", t.lr_drop_factor},
      {"momentum", t.momentum},
      {"weight_decay", t.weight_decay},
      {"seed", t.seed},
      {"schedule", schedule},
      {"dataset",
       {{"n_train", t.dataset.n_train},
        {"n_val", t.dataset.n_val},
        {"image_size", t.dataset.image_size},
        {"channels", t.dataset.channels},
        {"n_classes", t.dataset.n_classes},
        {"seed", t.dataset.seed},
        {"noise", t.dataset.noise}}},
      {"model",
       {{"conv3x3_channels", t.model.conv3x3_channels},
        {"conv1x1_channels", t.model.conv1x1_channels},
        {"pool", t.model.pool}}},
  };
  json out = {{"name", c.name},
              {"training", training},
              {"outputs", c.outputs.string()},
              {"emit_compressed", c.emit_compressed}};
  if (c.attack) {
    out["attack"] = {{"epsilons", c.attack->epsilons},
                     {"clamp_range", {c.attack->clamp_lo, c.attack->clamp_hi}}};
  }
  return out;
}

std::vector<std::string> config_warnings(const ExperimentConfig& config) {
  std::vector<std::string> out;
  const auto& s = config.training.schedule;
  if (s.final_sparsity > 0.0 && s.freeze_epoch() > config.training.epochs) {
    out.push_back("pruning era [" + std::to_string(s.first_epoch) + ", " +
                  std::to_string(s.freeze_epoch()) +
                  ") extends past the last epoch (" +
                  std::to_string(config.training.epochs) +
                  "); final sparsity will fall short of s_f");
  }
  return out;
}

ExperimentSummary execute_experiment(const ExperimentConfig& config,
                                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const SyntheticData data = make_synthetic_dataset(config.training.dataset);
  TrainResult result = train(config.training, data);
  const ToyModel& model = result.model;

  {
    std::ostringstream os;
    write_metrics_csv(os, result.metrics);
    write_text(out_dir / "metrics.csv", os.str());
  }

  const auto named = checkpoint_tensors(model);
  {
    std::vector<Tensor> tensors;
    json index = json::array();
    for (const auto& t : named) {
      tensors.push_back(t.tensor);
      index.push_back({{"name", t.name}, {"role", t.role}});
    }
    write_tensors(out_dir / "final_checkpoint", tensors);
    json sidecar = {{"format", "CAMP"},
                    {"version", kCheckpointVersion},
                    {"tensors", index},
                    {"config", to_json(config)},
                    {"epoch", config.training.epochs},
                    {"lr", result.final_lr},
                    {"rng_state", result.rng_state}};
    write_text(out_dir / "final_checkpoint.json", sidecar.dump(2) + "\n");
  }

  if (config.attack) {
    const auto points = robustness_sweep(model, data.val, *config.attack);
    std::ostringstream os;
    write_robustness_csv(os, points);
    write_text(out_dir / "robustness.csv", os.str());
  }

  if (config.emit_compressed) {
    const auto& sched = config.training.schedule;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
      const auto* conv = std::get_if<ConvLayer>(&model.layers()[i]);
      if (!conv) continue;
      const std::string name = model.layer_name(i);
      try {
        write_file_bytes(out_dir / (name + ".cksp"),
                         serialize(compress_ck(conv->weight, conv->mask)));
      } catch (const FormatError&) {
        // Not kernel-uniform (window / combined pruning).
      }
      const std::size_t rs = conv->weight.shape().kernel_size();
      if (sched.max_non_zero && *sched.max_non_zero <= rs && rs > 1) {
        try {
          write_file_bytes(
              out_dir / (name + ".wnsp"),
              serialize(compress_window(conv->weight, conv->mask,
                                        *sched.max_non_zero)));
        } catch (const FormatError&) {
          // Some kernel exceeds the budget (era ended early).
        }
      }
    }
  }

  ExperimentSummary summary;
  summary.name = config.name;
  summary.final_top1 = result.metrics.back().top1;
  summary.final_sparsity = result.metrics.back().sparsity;
  const MacCount macs = multiply_count(model);
  summary.dense_macs = macs.dense_macs;
  summary.sparse_macs = macs.sparse_macs;

  json js = {{"name", summary.name},
             {"final_top1", summary.final_top1},
             {"final_sparsity", summary.final_sparsity},
             {"dense_macs", summary.dense_macs},
             {"sparse_macs", summary.sparse_macs},
             {"granularity",
              std::string(to_string(config.training.schedule.granularity))},
             {"s_f", config.training.schedule.final_sparsity},
             {"epochs", config.training.epochs}};
  write_text(out_dir / "summary.json", js.dump(2) + "\n");
  return summary;
}

int run_experiment(const std::filesystem::path& config_path) {
  ExperimentConfig config;
  try {
    config = load_experiment_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << config_path.string() << ": " << e.what() << "\n";
    return kExitConfig;
  }
  for (const auto& w : config_warnings(config)) {
    std::cerr << "warning: " << w << "\n";
  }
  std::filesystem::path out_dir = config.outputs;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) {
    out_dir = env;
  }
  try {
    const auto summary = execute_experiment(config, out_dir);
    std::cout << summary.name << ": top1 " << fixed(summary.final_top1, 4)
              << ", sparsity " << fixed(summary.final_sparsity, 4) << ", MACs "
              << summary.sparse_macs << "/" << summary.dense_macs << " -> "
              << out_dir.string() << "\n";
    return kExitOk;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

ExperimentSummary read_summary(const std::filesystem::path& path) {
  json js;
  try {
    js = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  auto field = [&](const char* key) -> const json& {
    if (!js.is_object() || !js.contains(key)) {
      throw FormatError(path.string() + ": missing field '" + key + "'");
    }
    return js.at(key);
  };
  ExperimentSummary s;
  try {
    s.name = field("name").get<std::string>();
    s.final_top1 = field("final_top1").get<double>();
    s.final_sparsity = field("final_sparsity").get<double>();
    s.dense_macs = field("dense_macs").get<std::uint64_t>();
    s.sparse_macs = field("sparse_macs").get<std::uint64_t>();
  } catch (const json::type_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return s;
}

std::string compare_runs(const std::vector<std::filesystem::path>& summaries) {
  if (summaries.empty()) throw ContractError("compare_runs: no summaries");
  std::vector<ExperimentSummary> runs;
  for (const auto& p : summaries) runs.push_back(read_summary(p));

  std::size_t name_w = 3;
  for (const auto& r : runs) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "run" << "  "
     << std::right << std::setw(8) << "sparsity" << "  " << std::setw(8)
     << "top1" << "  " << std::setw(8) << "delta" << "  " << std::setw(8)
     << "macs" << "\n";
  const double base = runs.front().final_top1;
  for (const auto& r : runs) {
    const double macs = r.dense_macs
                            ? static_cast<double>(r.sparse_macs) /
                                  static_cast<double>(r.dense_macs)
                            : 0.0;
    double delta = r.final_top1 - base;
    if (std::abs(delta) < 5e-5) delta = 0.0;  // no "-0.0000"
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name << "  "
       << std::right << std::setw(8) << fixed(r.final_sparsity, 4) << "  "
       << std::setw(8) << fixed(r.final_top1, 4) << "  " << std::setw(8)
       << fixed(delta, 4) << "  " << std::setw(8) << fixed(macs, 4) << "\n";
  }
  return os.str();
}

std::string inspect_checkpoint(const std::filesystem::path& checkpoint) {
  const auto tensors = read_tensors(checkpoint);
  std::vector<std::string> names(tensors.size());
  std::vector<std::string> roles(tensors.size(), "tensor");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    names[i] = "tensor_" + std::to_string(i);
  }
  auto sidecar_path = checkpoint;
  sidecar_path += ".json";
  if (std::filesystem::exists(sidecar_path)) {
    const json js = json::parse(read_text(sidecar_path));
    const auto& index = js.at("tensors");
    if (index.size() != tensors.size()) {
      throw FormatError("sidecar lists " + std::to_string(index.size()) +
                        " tensors, container holds " +
                        std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      names[i] = index[i].at("name").get<std::string>();
      roles[i] = index[i].at("role").get<std::string>();
    }
  }

  std::ostringstream os;
  std::size_t name_w = 6;
  for (const auto& n : names) name_w = std::max(name_w, n.size());
  os << std::left << std::setw(static_cast<int>(name_w)) << "tensor" << "  "
     << std::setw(16) << "shape" << std::right << std::setw(10) << "entries"
     << std::setw(10) << "sparsity" << "\n";
  std::vector<std::span<const double>> weights;
  weights.reserve(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const bool is_weight = roles[i] == "weight" || roles[i] == "tensor";
    if (!is_weight) continue;
    const std::span<const double> v = tensors[i].values();
    weights.push_back(v);
    const std::span<const std::span<const double>> one(&weights.back(), 1);
    os << std::left << std::setw(static_cast<int>(name_w)) << names[i] << "  "
       << std::setw(16) << dims_to_string(tensors[i].dims()) << std::right
       << std::setw(10) << v.size() << std::setw(10)
       << fixed(measured_sparsity(one), 4) << "\n";
  }
  if (!weights.empty()) {
    os << std::left << std::setw(static_cast<int>(name_w)) << "network" << "  "
       << std::setw(16) << "" << std::right << std::setw(10) << "" << std::setw(10)
       << fixed(measured_sparsity(weights), 4) << "\n";
  }
  return os.str();
}

}  // namespace sparsetrain
