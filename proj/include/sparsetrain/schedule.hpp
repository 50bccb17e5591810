#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace sparsetrain {

enum class Granularity { Window, CK, Combined, FCFine, FCBlock };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view name);

inline bool is_conv_granularity(Granularity g) {
  return g == Granularity::Window || g == Granularity::CK ||
         g == Granularity::Combined;
}

enum class Phase { Dense, Pruning, Frozen };

std::string_view to_string(Phase p);
Phase parse_phase(std::string_view name);

// Gradual pruning schedule. The threshold rises from 0 at first_epoch to
// final_sparsity at first_epoch + era_length following a cubic-style
// polynomial with the given exponent.
struct PruningSchedule {
  double initial_sparsity = 0.0;  // s_i, pinned to 0
  double final_sparsity = 0.0;    // s_f
  int first_epoch = 0;            // e_i
  int era_length = 1;             // l_p
  double exponent = 3.0;          // r
  Granularity granularity = Granularity::CK;
  std::optional<std::size_t> max_non_zero;
  double window_fraction = 0.8;

  // Threshold-driven pruning of the FC layer alongside a conv scheme.
  // Empty means the FC layer is only touched by conv-driven elimination and
  // column coverage.
  std::optional<Granularity> fc_granularity;
  std::size_t fc_block = 2;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;

  int last_era_epoch() const { return first_epoch + era_length - 1; }
  int freeze_epoch() const { return first_epoch + era_length; }
};

double threshold_at(const PruningSchedule& sched, int epoch);
Phase phase_at(const PruningSchedule& sched, int epoch);

}  // namespace sparsetrain
