#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparsetrain/model.hpp"

namespace sparsetrain {

struct SyntheticSpec {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t image_size = 8;
  std::size_t channels = 3;
  std::size_t n_classes = 10;
  std::uint64_t seed = 1;
  // Per-pixel Gaussian noise added to the shifted class prototype.
  double noise = 0.35;
};

// Pixel values of every generated image lie in this closed range.
inline constexpr double kPixelMin = -1.0;
inline constexpr double kPixelMax = 1.0;

struct Dataset {
  ActShape shape;
  std::size_t n_classes = 0;
  std::vector<double> images;  // sample-major
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
};

struct SyntheticData {
  Dataset train;
  Dataset val;
};

// Class-conditional images: a per-class random prototype, circularly shifted
// by up to one pixel per axis, plus Gaussian noise, clipped to
// [kPixelMin, kPixelMax]. Labels are balanced (round-robin) and the sample
// order is shuffled. Deterministic given the seed.
SyntheticData make_synthetic_dataset(const SyntheticSpec& spec);

}  // namespace sparsetrain
