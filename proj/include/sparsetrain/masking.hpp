#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sparsetrain/tensor.hpp"

namespace sparsetrain {

// One pruning locale: a kernel (window pruning) or a channel column of
// kernels (CK pruning).
struct LocaleSelection {
  std::size_t locale_size = 0;
  double target_threshold = 0.0;
  std::optional<std::size_t> max_non_zero;
};

// Number of locale members to prune: floor(size * threshold), raised so at
// most max_non_zero members survive, clamped to [0, size].
std::size_t prune_count(const LocaleSelection& sel);

// Per (k, c) kernel, prunes the prune_count smallest-magnitude weights.
PruneMask window_mask(const ConvWeight& w, double threshold,
                      std::optional<std::size_t> max_non_zero = std::nullopt);

// Kernels to prune in each input-channel column. The layer as a whole gives
// up floor(K * C * threshold) kernels: every column takes floor(K *
// threshold), and the remainder goes to the columns whose next candidate
// kernel has the smallest kernel_max (ties: lowest c). max_non_zero, when
// set, caps the surviving kernels per column.
std::vector<std::size_t> ck_prune_counts(std::span<const double> kmax,
                                         const ConvShape& shape,
                                         double threshold,
                                         std::optional<std::size_t> max_non_zero);

// Per input channel c, zeroes the ck_prune_counts[c] kernels with the
// smallest kernel_max (ties: lowest k).
PruneMask ck_mask(const ConvWeight& w, double threshold,
                  std::optional<std::size_t> max_non_zero = std::nullopt);

// Window pruning at threshold * window_fraction, followed by whole-kernel
// pruning per channel column, smallest post-window kernel_max first, until
// the column holds as many zeros as CK pruning would leave in it. Phase-one
// zeros count toward that budget.
// max_non_zero caps survivors per kernel in the window phase.
PruneMask combined_mask(const ConvWeight& w, double threshold,
                        double window_fraction,
                        std::optional<std::size_t> max_non_zero = std::nullopt);

PruneMask fc_fine_mask(const FCWeight& w, double threshold);

// Tiles the matrix into block x block tiles (ragged at the edges) and
// zeroes the lowest-scoring tiles by sum of magnitudes. block in [1, 4].
PruneMask fc_block_mask(const FCWeight& w, double threshold,
                        std::size_t block);

// Zeroes the FC input rows fed by output channels of the last conv layer
// whose kernels are all pruned. fc.rows() must equal K * neurons_per_channel.
PruneMask conv_driven_fc_elimination(const PruneMask& last_conv_mask,
                                     const FCWeight& fc,
                                     std::size_t neurons_per_channel);

// Restores the largest-magnitude entry of every column left without a
// surviving bit. Ties go to the lowest row.
PruneMask ensure_column_coverage(const PruneMask& m, const FCWeight& w);

// Columns of an FC mask with no surviving entry.
std::vector<std::size_t> uncovered_columns(const PruneMask& m);

PruneMask monotone_and(const PruneMask& prev, const PruneMask& next);

}  // namespace sparsetrain
