#include "sparsetrain/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

namespace {

// Relative slack so that e.g. 9 * (5.0 / 9) counts as 5, not 4.
constexpr double kFloorSlack = 1e-9;

// Indices of the `count` smallest scores, ordered by (score, index).
std::vector<std::size_t> smallest(const std::vector<double>& scores,
                                  std::size_t count) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, idx.size());
  auto less = [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count),
                   idx.end(), less);
  idx.resize(count);
  std::sort(idx.begin(), idx.end(), less);
  return idx;
}

void check_threshold(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ContractError(std::string(what) + ": threshold must lie in [0, 1]");
  }
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": shape mismatch " +
                        dims_to_string(a) + " vs " + dims_to_string(b));
  }
}

}  // namespace

std::size_t prune_count(const LocaleSelection& sel) {
  const auto size = static_cast<double>(sel.locale_size);
  double n = std::floor(size * sel.target_threshold * (1.0 + kFloorSlack));
  if (sel.max_non_zero) {
    n = std::max(n, size - static_cast<double>(*sel.max_non_zero));
  }
  n = std::clamp(n, 0.0, size);
  return static_cast<std::size_t>(n);
}

PruneMask window_mask(const ConvWeight& w, double threshold,
                      std::optional<std::size_t> max_non_zero) {
  check_threshold(threshold, "window_mask");
  const auto& s = w.shape();
  const std::size_t rs = s.kernel_size();
  const std::size_t n = prune_count({rs, threshold, max_non_zero});
  std::vector<std::uint8_t> bits(w.size(), 1);
  if (n == 0) return PruneMask(w.dims(), std::move(bits));

  std::vector<double> scores(rs);
  for (std::size_t k = 0; k < s.out_channels; ++k) {
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      const auto kern = w.kernel(k, c);
      std::transform(kern.begin(), kern.end(), scores.begin(),
                     [](double v) { return std::abs(v); });
      const std::size_t base = w.index(k, c, 0, 0);
      for (auto i : smallest(scores, n)) bits[base + i] = 0;
    }
  }
  return PruneMask(w.dims(), std::move(bits));
}

std::vector<std::size_t> ck_prune_counts(std::span<const double> kmax,
                                         const ConvShape& shape,
                                         double threshold,
                                         std::optional<std::size_t> max_non_zero) {
  const std::size_t K = shape.out_channels;
  const std::size_t C = shape.in_channels;
  if (kmax.size() != K * C) {
    throw ContractError("ck_prune_counts: kernel_max size mismatch");
  }
  const std::size_t base = prune_count({K, threshold, std::nullopt});
  const std::size_t total = prune_count({K * C, threshold, std::nullopt});
  std::vector<std::size_t> counts(C, base);

  std::size_t extra = total > base * C ? total - base * C : 0;
  if (extra > 0 && base < K) {
    // The next kernel each column would give up; the smallest of these
    // absorb the remainder.
    std::vector<double> next(C);
    std::vector<double> column(K);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < K; ++k) column[k] = kmax[k * C + c];
      next[c] = column[smallest(column, base + 1).back()];
    }
    for (auto c : smallest(next, extra)) ++counts[c];
  }
  if (max_non_zero) {
    const std::size_t floor_count = K > *max_non_zero ? K - *max_non_zero : 0;
    for (auto& n : counts) n = std::max(n, floor_count);
  }
  return counts;
}

PruneMask ck_mask(const ConvWeight& w, double threshold,
                  std::optional<std::size_t> max_non_zero) {
  check_threshold(threshold, "ck_mask");
  const auto& s = w.shape();
  const auto km = kernel_max(w);
  const auto counts = ck_prune_counts(km, s, threshold, max_non_zero);
  std::vector<std::uint8_t> bits(w.size(), 1);
  std::vector<double> column(s.out_channels);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t k = 0; k < s.out_channels; ++k) {
      column[k] = km[k * s.in_channels + c];
    }
    for (auto k : smallest(column, counts[c])) {
      const std::size_t base = w.index(k, c, 0, 0);
      std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(base),
                  s.kernel_size(), std::uint8_t{0});
    }
  }
  return PruneMask(w.dims(), std::move(bits));
}

PruneMask combined_mask(const ConvWeight& w, double threshold,
                        double window_fraction,
                        std::optional<std::size_t> max_non_zero) {
  check_threshold(threshold, "combined_mask");
  if (!(window_fraction >= 0.0 && window_fraction <= 1.0)) {
    throw ContractError("combined_mask: window_fraction must lie in [0, 1]");
  }
  PruneMask window = window_mask(w, threshold * window_fraction, max_non_zero);
  // Nothing of the threshold is left for the kernel phase.
  if (window_fraction >= 1.0) return window;

  const auto& s = w.shape();
  const std::size_t rs = s.kernel_size();
  const auto km = kernel_max(apply_mask(w, window));
  const auto counts = ck_prune_counts(km, s, threshold, std::nullopt);

  std::vector<std::uint8_t> bits(window.bits().begin(), window.bits().end());
  std::vector<double> column(s.out_channels);
  std::vector<std::size_t> kept(s.out_channels);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    std::size_t zeros = 0;
    for (std::size_t k = 0; k < s.out_channels; ++k) {
      column[k] = km[k * s.in_channels + c];
      const auto base = w.index(k, c, 0, 0);
      kept[k] = static_cast<std::size_t>(
          std::count(bits.begin() + static_cast<std::ptrdiff_t>(base),
                     bits.begin() + static_cast<std::ptrdiff_t>(base + rs),
                     std::uint8_t{1}));
      zeros += rs - kept[k];
    }
    for (auto k : smallest(column, s.out_channels)) {
      if (zeros >= counts[c] * rs) break;
      if (kept[k] == 0) continue;
      const auto base = w.index(k, c, 0, 0);
      std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(base), rs,
                  std::uint8_t{0});
      zeros += kept[k];
    }
  }
  return PruneMask(w.dims(), std::move(bits));
}

PruneMask fc_fine_mask(const FCWeight& w, double threshold) {
  check_threshold(threshold, "fc_fine_mask");
  const std::size_t n = prune_count({w.size(), threshold, std::nullopt});
  std::vector<std::uint8_t> bits(w.size(), 1);
  if (n > 0) {
    std::vector<double> scores(w.size());
    std::transform(w.values().begin(), w.values().end(), scores.begin(),
                   [](double v) { return std::abs(v); });
    for (auto i : smallest(scores, n)) bits[i] = 0;
  }
  return ensure_column_coverage(PruneMask(w.dims(), std::move(bits)), w);
}

PruneMask fc_block_mask(const FCWeight& w, double threshold,
                        std::size_t block) {
  if (block < 1 || block > 4) {
    throw ConfigError("fc_block_mask: block must lie in [1, 4], got " +
                      std::to_string(block));
  }
  check_threshold(threshold, "fc_block_mask");
  const std::size_t tile_rows = (w.rows() + block - 1) / block;
  const std::size_t tile_cols = (w.cols() + block - 1) / block;
  std::vector<double> sums(tile_rows * tile_cols, 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      sums[(i / block) * tile_cols + j / block] += std::abs(w.at(i, j));
    }
  }
  const std::size_t n = prune_count({sums.size(), threshold, std::nullopt});
  std::vector<std::uint8_t> bits(w.size(), 1);
  for (auto t : smallest(sums, n)) {
    const std::size_t r0 = (t / tile_cols) * block;
    const std::size_t c0 = (t % tile_cols) * block;
    for (std::size_t i = r0; i < std::min(r0 + block, w.rows()); ++i) {
      for (std::size_t j = c0; j < std::min(c0 + block, w.cols()); ++j) {
        bits[i * w.cols() + j] = 0;
      }
    }
  }
  return ensure_column_coverage(PruneMask(w.dims(), std::move(bits)), w);
}

PruneMask conv_driven_fc_elimination(const PruneMask& last_conv_mask,
                                     const FCWeight& fc,
                                     std::size_t neurons_per_channel) {
  const auto& d = last_conv_mask.dims();
  if (d.size() != 4) {
    throw ContractError("conv_driven_fc_elimination: conv mask must be rank 4");
  }
  const std::size_t K = d[0];
  const std::size_t per_k = d[1] * d[2] * d[3];
  if (fc.rows() != K * neurons_per_channel) {
    throw ContractError("conv_driven_fc_elimination: FC rows " +
                        std::to_string(fc.rows()) + " != K * neurons (" +
                        std::to_string(K) + " * " +
                        std::to_string(neurons_per_channel) + ")");
  }
  std::vector<std::uint8_t> bits(fc.size(), 1);
  const auto conv_bits = last_conv_mask.bits();
  for (std::size_t k = 0; k < K; ++k) {
    const auto first = conv_bits.begin() + static_cast<std::ptrdiff_t>(k * per_k);
    const bool dead = std::none_of(first, first + static_cast<std::ptrdiff_t>(per_k),
                                   [](std::uint8_t b) { return b != 0; });
    if (!dead) continue;
    const std::size_t r0 = k * neurons_per_channel;
    std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(r0 * fc.cols()),
                neurons_per_channel * fc.cols(), std::uint8_t{0});
  }
  return PruneMask(fc.dims(), std::move(bits));
}

PruneMask ensure_column_coverage(const PruneMask& m, const FCWeight& w) {
  require_same_dims(m.dims(), w.dims(), "ensure_column_coverage");
  std::vector<std::uint8_t> bits(m.bits().begin(), m.bits().end());
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  for (std::size_t j = 0; j < cols; ++j) {
    bool covered = false;
    for (std::size_t i = 0; i < rows && !covered; ++i) {
      covered = bits[i * cols + j] != 0;
    }
    if (covered) continue;
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows; ++i) {
      if (std::abs(w.at(i, j)) > std::abs(w.at(best, j))) best = i;
    }
    bits[best * cols + j] = 1;
  }
  return PruneMask(m.dims(), std::move(bits));
}

std::vector<std::size_t> uncovered_columns(const PruneMask& m) {
  if (m.dims().size() != 2) {
    throw ContractError("uncovered_columns: mask must be rank 2");
  }
  const std::size_t rows = m.dims()[0];
  const std::size_t cols = m.dims()[1];
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < cols; ++j) {
    bool covered = false;
    for (std::size_t i = 0; i < rows && !covered; ++i) covered = m[i * cols + j];
    if (!covered) out.push_back(j);
  }
  return out;
}

PruneMask monotone_and(const PruneMask& prev, const PruneMask& next) {
  require_same_dims(prev.dims(), next.dims(), "monotone_and");
  std::vector<std::uint8_t> bits(prev.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bits[i] = static_cast<std::uint8_t>(prev[i] & next[i]);
  }
  return PruneMask(prev.dims(), std::move(bits));
}

}  // namespace sparsetrain
