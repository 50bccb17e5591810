// Acceptance suite: one PASS/FAIL line per criterion, with its runtime
// budget. Exit status is nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sparsetrain/adversarial.hpp"
#include "sparsetrain/compressed.hpp"
#include "sparsetrain/errors.hpp"
#include "sparsetrain/experiment.hpp"
#include "sparsetrain/masking.hpp"
#include "sparsetrain/schedule.hpp"
#include "sparsetrain/trainer.hpp"

#ifndef SPARSETRAIN_CLI
#error "SPARSETRAIN_CLI must name the CLI executable"
#endif

using namespace sparsetrain;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ConvWeight normal_conv(ConvShape s, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(s.size());
  for (auto& x : v) x = d(rng);
  return ConvWeight(s, std::move(v));
}

// -------------------------------------------------------------- 1

Outcome schedule_exactness() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int bad = 0;
  for (int n = 0; n < 1000; ++n) {
    PruningSchedule s;
    s.final_sparsity = u(rng);
    s.first_epoch = static_cast<int>(rng() % 100);
    s.era_length = 1 + static_cast<int>(rng() % 60);
    s.exponent = 1.0 + 5.0 * u(rng);
    s.validate();
    if (threshold_at(s, s.first_epoch) != 0.0) ++bad;
    if (threshold_at(s, s.first_epoch + s.era_length) != s.final_sparsity) ++bad;
    double prev = 0.0;
    for (int e = 0; e <= s.first_epoch + s.era_length + 10; ++e) {
      const double t = threshold_at(s, e);
      if (t < prev || t > s.final_sparsity) ++bad;
      prev = t;
    }
  }
  return {bad == 0, fmt("1000 schedules, %d violations", bad)};
}

// -------------------------------------------------------------- 2

Outcome mask_oracles() {
  std::mt19937_64 rng(202);
  int mismatches = 0, comparisons = 0;
  auto threshold = [&] {
    // Mix grid values (exact fractions hit floor edges) with arbitrary ones.
    if (rng() & 1) return static_cast<double>(rng() % 21) / 20.0;
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };
  auto check = [&](const PruneMask& got, const PruneMask& want) {
    ++comparisons;
    if (got != want) ++mismatches;
  };
  for (int n = 0; n < 500; ++n) {
    ConvShape s;
    do {
      s = {1 + rng() % 6, 1 + rng() % 6, 1 + rng() % 3, 1 + rng() % 3};
    } while (s.size() > 200);
    std::vector<double> v(s.size());
    for (auto& x : v) x = oracle::tie_heavy(rng);
    const ConvWeight w(s, v);
    const double t = threshold();
    const std::optional<std::size_t> cap =
        (rng() % 3 == 0) ? std::optional<std::size_t>(1 + rng() % s.kernel_size())
                         : std::nullopt;
    const double wf = (rng() % 5) / 4.0;
    check(window_mask(w, t, cap), oracle::window(w, t, cap));
    check(ck_mask(w, t, cap), oracle::ck(w, t, cap));
    check(combined_mask(w, t, wf, cap), oracle::combined(w, t, wf, cap));

    std::size_t rows, cols;
    do {
      rows = 1 + rng() % 20;
      cols = 1 + rng() % 20;
    } while (rows * cols > 200);
    std::vector<double> f(rows * cols);
    for (auto& x : f) x = oracle::tie_heavy(rng);
    const FCWeight fc(rows, cols, f);
    const std::size_t b = 1 + rng() % 4;
    check(fc_fine_mask(fc, t), oracle::fc_fine(fc, t));
    check(fc_block_mask(fc, t, b), oracle::fc_block(fc, t, b));
  }
  return {mismatches == 0,
          fmt("500 tensors, %d/%d masks differ from the oracle", mismatches, comparisons)};
}

// -------------------------------------------------------------- 3

Outcome ck_target_tracking() {
  std::mt19937_64 rng(303);
  const auto w = normal_conv({64, 64, 3, 3}, rng);
  const double granule = 9.0 / 36864.0;
  bool ok = true;
  std::string detail = "measured";
  for (double t : {0.2, 0.4, 0.6, 0.8}) {
    const auto masked = apply_mask(w, ck_mask(w, t));
    std::span<const double> one[] = {masked.values()};
    const double s = measured_sparsity(one);
    ok = ok && std::fabs(s - t) <= granule;
    detail += fmt(" %.5f", s);
  }
  return {ok, detail + fmt(" (granule %.5f)", granule)};
}

// -------------------------------------------------------------- 4

TrainingConfig toy_config(int epochs) {
  TrainingConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.lr0 = 0.05;
  c.lr_drop_epochs = {8};
  c.seed = 7;
  return c;
}

std::vector<PruneMask> masks_of(const ToyModel& m) {
  std::vector<PruneMask> out;
  for (auto i : m.prunable_layers()) {
    if (auto* c = std::get_if<ConvLayer>(&m.layers()[i])) out.push_back(c->mask);
    else out.push_back(std::get<FCLayer>(m.layers()[i]).mask);
  }
  return out;
}

Outcome zero_forever_and_frozen() {
  std::string detail;
  bool ok = true;
  for (auto [g, fc] : {std::pair{Granularity::CK, Granularity::FCFine},
                       std::pair{Granularity::Combined, Granularity::FCBlock}}) {
    auto c = toy_config(12);
    c.schedule.final_sparsity = 0.6;
    c.schedule.first_epoch = 3;
    c.schedule.era_length = 5;
    c.schedule.granularity = g;
    c.schedule.fc_granularity = fc;

    std::vector<std::vector<std::uint8_t>> ever_pruned;
    std::size_t resurrected = 0;
    std::vector<PruneMask> frozen;
    int frozen_changes = 0;
    TrainHooks hooks;
    hooks.after_batch = [&](const ToyModel& m, int, std::size_t) {
      const auto ws = m.prunable_weights();
      const auto ms = masks_of(m);
      if (ever_pruned.empty()) {
        for (const auto& mk : ms) ever_pruned.emplace_back(mk.size(), 0);
      }
      for (std::size_t l = 0; l < ws.size(); ++l) {
        for (std::size_t i = 0; i < ws[l].size(); ++i) {
          if (ever_pruned[l][i] && (ws[l][i] != 0.0 || ms[l][i] != 0)) ++resurrected;
          if (ms[l][i] == 0) ever_pruned[l][i] = 1;
        }
      }
    };
    hooks.after_epoch = [&](const ToyModel& m, const MetricsRow& row) {
      if (row.epoch == c.schedule.last_era_epoch()) frozen = masks_of(m);
      if (row.epoch > c.schedule.last_era_epoch() && masks_of(m) != frozen) ++frozen_changes;
    };
    const auto r = train(c, hooks);
    ok = ok && resurrected == 0 && frozen_changes == 0 && !frozen.empty();
    detail += fmt("%s/%s: %zu revived, %d frozen-mask changes, sparsity %.4f; ",
                  std::string(to_string(g)).c_str(), std::string(to_string(fc)).c_str(),
                  resurrected, frozen_changes, r.metrics.back().sparsity);
  }
  return {ok, detail};
}

// -------------------------------------------------------------- 5

Outcome gradient_check() {
  std::mt19937_64 rng(505);
  auto m = make_toy_model({20, 20, 2}, {3, 8, 8}, 10, rng);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& l : m.layers()) {
    if (auto* c = std::get_if<ConvLayer>(&l)) for (auto& v : c->bias) v = u(rng);
    if (auto* f = std::get_if<FCLayer>(&l)) for (auto& v : f->bias) v = u(rng);
  }
  const auto data = make_synthetic_dataset({64, 8});
  std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto batch = data.train.batch(idx);
  const std::vector<int> labels(data.train.labels.begin(), data.train.labels.begin() + 4);
  bool ok = true;
  std::string detail;
  for (const auto& rep : gradcheck::check_model(m, batch, labels, 100, rng)) {
    ok = ok && rep.checked >= 100 && rep.worst <= gradcheck::kRelTol;
    detail += fmt("%s %zu pts (%zu kink skips) worst %.1e; ", rep.what.c_str(), rep.checked,
                  rep.skipped, rep.worst);
  }
  return {ok, detail};
}

// -------------------------------------------------------------- 6, 8

struct TrainedRuns {
  SyntheticData data;
  TrainResult dense;
};

const TrainedRuns& dense_run() {
  static const TrainedRuns runs = [] {
    const auto c = toy_config(12);
    TrainedRuns r{make_synthetic_dataset(c.dataset), {}};
    r.dense = train(c, r.data);
    return r;
  }();
  return runs;
}

Outcome accuracy_trade() {
  const auto& base = dense_run();
  auto ck = toy_config(12);
  ck.schedule.final_sparsity = 0.6;
  ck.schedule.granularity = Granularity::CK;
  ck.schedule.fc_granularity = Granularity::FCFine;
  ck.schedule.era_length = 5;
  ck.schedule.first_epoch = 3;  // 25% of the epochs dense
  const auto delayed = train(ck, base.data);
  ck.schedule.first_epoch = 0;
  const auto early = train(ck, base.data);

  const double d = base.dense.metrics.back().top1;
  const double late = delayed.metrics.back().top1;
  const double e0 = early.metrics.back().top1;
  const double n = static_cast<double>(base.data.val.size());
  const double noise = 2.0 * std::sqrt(late * (1 - late) / n);
  const bool ok = d >= 0.90 && late >= d - 0.05;
  return {ok, fmt("dense %.4f; CK s_f=0.6 era@3 %.4f (sparsity %.4f); era@0 %.4f "
                  "(%s the 2-sigma noise %.4f of the delayed era)",
                  d, late, delayed.metrics.back().sparsity, e0,
                  std::fabs(e0 - late) <= noise ? "within" : "outside", noise)};
}

Outcome fgsm_sanity() {
  const auto& base = dense_run();
  const auto& m = base.dense.model;
  const auto& val = base.data.val;
  const AttackSpec spec;
  bool identity = true;
  double worst_excess = 0.0;
  for (std::size_t start = 0; start < val.size(); start += 100) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(val.size(), start + 100); ++i) idx.push_back(i);
    const auto b = val.batch(idx);
    const std::vector<int> labels(val.labels.begin() + static_cast<std::ptrdiff_t>(start),
                                  val.labels.begin() +
                                      static_cast<std::ptrdiff_t>(start + idx.size()));
    identity = identity && fgsm_perturb(m, b, labels, 0.0, spec.clamp_lo, spec.clamp_hi).data ==
                               b.data;
    for (double eps : spec.epsilons) {
      const auto p = fgsm_perturb(m, b, labels, eps, spec.clamp_lo, spec.clamp_hi);
      for (std::size_t i = 0; i < b.data.size(); ++i) {
        // x + eps - x can exceed eps by one rounding step.
        worst_excess = std::max(worst_excess, std::fabs(p.data[i] - b.data[i]) - eps);
        if (p.data[i] < spec.clamp_lo || p.data[i] > spec.clamp_hi) worst_excess = 1.0;
      }
    }
  }
  const auto sweep = robustness_sweep(m, val, spec);
  const bool ok = identity && worst_excess <= 1e-12 && sweep.back().top1 < sweep.front().top1;
  std::string curve;
  for (const auto& p : sweep) curve += fmt(" %.2f:%.3f", p.epsilon, p.top1);
  return {ok, fmt("identity %s, max |dx|-eps %.1e, sweep", identity ? "yes" : "no",
                  worst_excess) +
                  curve};
}

// -------------------------------------------------------------- 7

Outcome compression_fuzz() {
  std::mt19937_64 rng(707);
  int roundtrip_failures = 0, accepted_garbage = 0, wrong_error = 0, mutations = 0;
  auto expect_reject = [&](auto&& parse, const std::vector<std::uint8_t>& b) {
    try {
      parse(b);
      ++accepted_garbage;
    } catch (const FormatError&) {
    } catch (...) {
      ++wrong_error;
    }
  };
  auto tolerate = [&](auto&& parse, const std::vector<std::uint8_t>& b) {
    ++mutations;
    try {
      parse(b);
    } catch (const FormatError&) {
    } catch (...) {
      ++wrong_error;
    }
  };
  const auto parse_ck = [](const std::vector<std::uint8_t>& b) {
    return decompress_ck(deserialize_ck(b));
  };
  const auto parse_wn = [](const std::vector<std::uint8_t>& b) {
    return decompress_window(deserialize_window(b));
  };

  for (int n = 0; n < 1000; ++n) {
    const ConvShape s{1 + rng() % 8, 1 + rng() % 8, 1 + rng() % 4, 1 + rng() % 4};
    const auto w = normal_conv(s, rng);
    const std::size_t rs = s.kernel_size();
    const double keep = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    std::vector<std::uint8_t> ck_bits(w.size());
    for (std::size_t k = 0; k < s.kernel_count(); ++k) {
      const std::uint8_t b = std::bernoulli_distribution(keep)(rng);
      std::fill_n(ck_bits.begin() + static_cast<std::ptrdiff_t>(k * rs), rs, b);
    }
    const PruneMask ck_m(w.dims(), ck_bits);
    const auto ck = compress_ck(w, ck_m);
    const auto ck_bytes = serialize(ck);
    if (!(deserialize_ck(ck_bytes) == ck) ||
        decompress_ck(deserialize_ck(ck_bytes)) != apply_mask(w, ck_m)) {
      ++roundtrip_failures;
    }

    const std::size_t mnz = 1 + rng() % rs;
    std::vector<std::uint8_t> wn_bits(w.size(), 0);
    for (std::size_t k = 0; k < s.kernel_count(); ++k) {
      std::vector<std::size_t> pos(rs);
      for (std::size_t i = 0; i < rs; ++i) pos[i] = i;
      std::shuffle(pos.begin(), pos.end(), rng);
      const std::size_t live = rng() % (mnz + 1);
      for (std::size_t i = 0; i < live; ++i) wn_bits[k * rs + pos[i]] = 1;
    }
    const PruneMask wn_m(w.dims(), wn_bits);
    const auto wn = compress_window(w, wn_m, mnz);
    const auto wn_bytes = serialize(wn);
    if (!(deserialize_window(wn_bytes) == wn) ||
        decompress_window(deserialize_window(wn_bytes)) != apply_mask(w, wn_m)) {
      ++roundtrip_failures;
    }

    // Malformed buffers: truncation or extension must be rejected; random
    // byte corruption must either parse or raise a format error.
    for (const auto* good : {&ck_bytes, &wn_bytes}) {
      const bool is_ck = good == &ck_bytes;
      auto cut = *good;
      cut.resize(rng() % good->size());
      auto longer = *good;
      longer.resize(good->size() + 1 + rng() % 16, static_cast<std::uint8_t>(rng()));
      auto flipped = *good;
      for (int f = 0; f < 1 + static_cast<int>(rng() % 4); ++f) {
        flipped[rng() % flipped.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      }
      std::vector<std::uint8_t> noise(rng() % 64);
      for (auto& x : noise) x = static_cast<std::uint8_t>(rng());
      if (is_ck) {
        expect_reject(parse_ck, cut);
        expect_reject(parse_ck, longer);
        tolerate(parse_ck, flipped);
        tolerate(parse_ck, noise);
      } else {
        expect_reject(parse_wn, cut);
        expect_reject(parse_wn, longer);
        tolerate(parse_wn, flipped);
        tolerate(parse_wn, noise);
      }
    }
  }
  const bool ok = roundtrip_failures == 0 && accepted_garbage == 0 && wrong_error == 0;
  return {ok, fmt("2000 roundtrips, %d failures; truncated/extended accepted %d; "
                  "%d corrupted buffers, %d non-format errors",
                  roundtrip_failures, accepted_garbage, mutations, wrong_error)};
}

// -------------------------------------------------------------- 9

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "sparsetrain_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "config.json";
  std::ofstream(config) << R"({
  "name": "determinism",
  "training": {
    "epochs": 10, "batch_size": 32, "lr0": 0.05, "lr_drop_epochs": [8], "seed": 11,
    "schedule": {"s_f": 0.6, "e_i": 2, "l_p": 5, "granularity": "Combined",
                 "fc_granularity": "FCFine"}
  },
  "attack": {},
  "emit_compressed": true
})";
  int codes[2];
  for (int i = 0; i < 2; ++i) {
    const std::string cmd = std::string(kOutputDirEnv) + "='" + (dir / std::to_string(i)).string() +
                            "' '" + SPARSETRAIN_CLI + "' run '" + config.string() +
                            "' > /dev/null";
    codes[i] = std::system(cmd.c_str());
  }
  bool same = codes[0] == 0 && codes[1] == 0;
  std::string detail = fmt("exit codes %d/%d;", codes[0], codes[1]);
  for (const char* f : {"metrics.csv", "final_checkpoint", "final_checkpoint.json",
                        "robustness.csv", "summary.json"}) {
    const auto a = slurp(dir / "0" / f);
    const auto b = slurp(dir / "1" / f);
    const bool eq = !a.empty() && a == b;
    same = same && eq;
    detail += fmt(" %s %s (%zu B)", f, eq ? "identical" : "DIFFERENT", a.size());
  }
  fs::remove_all(dir);
  return {same, detail};
}

// -------------------------------------------------------------- 10

Outcome multiply_accounting() {
  std::mt19937_64 rng(1010);
  int mismatches = 0;
  std::string detail;
  for (int n = 0; n < 20; ++n) {
    const ModelSpec spec{2 + rng() % 20, 2 + rng() % 20, 1 + rng() % 2};
    std::size_t size = 0;
    do {
      size = 5 + rng() % 8;
    } while ((size - 2) % spec.pool != 0);
    auto m = make_toy_model(spec, {1 + rng() % 3, size, size}, 2 + rng() % 9, rng);
    const double keep = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    for (auto i : m.prunable_layers()) {
      std::visit(
          [&](auto& l) {
            if constexpr (requires { l.mask; }) {
              std::vector<std::uint8_t> bits(l.weight.size());
              for (auto& b : bits) b = std::bernoulli_distribution(keep)(rng);
              l.mask = PruneMask(l.weight.dims(), bits);
            }
          },
          m.layers()[i]);
    }
    m.apply_masks();
    Batch one{1, m.input_shape(), std::vector<double>(m.input_shape().size(), 0.5)};
    MultiplyCounter counter;
    forward(m, one, &counter);
    const auto mc = multiply_count(m);
    if (mc.sparse_macs != counter.multiplies ||
        mc.sparse_macs != oracle::literal_multiplies(m)) {
      ++mismatches;
    }
    if (n < 3) {
      detail += fmt("%llu/%llu ", static_cast<unsigned long long>(mc.sparse_macs),
                    static_cast<unsigned long long>(counter.multiplies));
    }
  }
  return {mismatches == 0, fmt("20 models, %d mismatches (first: ", mismatches) + detail + ")"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "schedule exactness", 1.0, schedule_exactness},
      {2, "mask oracle equivalence", 30.0, mask_oracles},
      {3, "CK target-sparsity tracking", 60.0, ck_target_tracking},
      {4, "zero-forever and frozen masks", 120.0, zero_forever_and_frozen},
      {5, "gradient correctness", 30.0, gradient_check},
      {6, "sparsity/accuracy trade", 300.0, accuracy_trade},
      {7, "compression roundtrips", 30.0, compression_fuzz},
      {8, "FGSM sanity", 60.0, fgsm_sanity},
      {9, "CLI determinism", 300.0, cli_determinism},
      {10, "multiply accounting", 60.0, multiply_accounting},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs < c.budget_s;
    const bool pass = o.pass && in_budget;
    if (!pass) ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " ["
              << fmt("%.2f s / %.0f s budget", secs, c.budget_s)
              << (in_budget ? "" : ", OVER BUDGET") << "]: " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
