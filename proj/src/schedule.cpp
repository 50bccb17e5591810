#include "sparsetrain/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Window: return "Window";
    case Granularity::CK: return "CK";
    case Granularity::Combined: return "Combined";
    case Granularity::FCFine: return "FCFine";
    case Granularity::FCBlock: return "FCBlock";
  }
  return "?";
}

Granularity parse_granularity(std::string_view name) {
  for (auto g : {Granularity::Window, Granularity::CK, Granularity::Combined,
                 Granularity::FCFine, Granularity::FCBlock}) {
    if (name == to_string(g)) return g;
  }
  throw ConfigError("unknown granularity \"" + std::string(name) +
                    "\" (expected Window, CK, Combined, FCFine or FCBlock)");
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Dense: return "dense";
    case Phase::Pruning: return "pruning";
    case Phase::Frozen: return "frozen";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  for (auto p : {Phase::Dense, Phase::Pruning, Phase::Frozen}) {
    if (name == to_string(p)) return p;
  }
  throw FormatError("unknown phase \"" + std::string(name) + "\"");
}

void PruningSchedule::validate() const {
  if (initial_sparsity != 0.0) {
    throw ConfigError("s_i must be 0");
  }
  if (!(final_sparsity >= 0.0 && final_sparsity <= 1.0)) {
    throw ConfigError("s_f must lie in [0, 1]");
  }
  if (first_epoch < 0) throw ConfigError("e_i must be >= 0");
  if (era_length < 1) throw ConfigError("l_p must be >= 1");
  if (!(exponent >= 1.0)) throw ConfigError("r must be >= 1");
  if (!(window_fraction >= 0.0 && window_fraction <= 1.0)) {
    throw ConfigError("window_fraction must lie in [0, 1]");
  }
  if (max_non_zero && *max_non_zero == 0) {
    throw ConfigError("max_non_zero must be >= 1 when set");
  }
  if (fc_granularity && is_conv_granularity(*fc_granularity)) {
    throw ConfigError("fc_granularity must be FCFine or FCBlock");
  }
  if (fc_block < 1 || fc_block > 4) {
    throw ConfigError("fc_block must lie in [1, 4]");
  }
}

double threshold_at(const PruningSchedule& sched, int epoch) {
  if (epoch < sched.first_epoch) return 0.0;
  if (epoch >= sched.freeze_epoch()) return sched.final_sparsity;
  const double progress = static_cast<double>(epoch - sched.first_epoch) /
                          static_cast<double>(sched.era_length);
  const double t =
      sched.final_sparsity - (sched.initial_sparsity + sched.final_sparsity) *
                                 std::pow(1.0 - progress, sched.exponent);
  return std::clamp(t, 0.0, sched.final_sparsity);
}

Phase phase_at(const PruningSchedule& sched, int epoch) {
  if (epoch < sched.first_epoch) return Phase::Dense;
  if (epoch < sched.freeze_epoch()) return Phase::Pruning;
  return Phase::Frozen;
}

}  // namespace sparsetrain
