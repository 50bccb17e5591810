#include "sparsetrain/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  b.count = indices.size();
  b.shape = shape;
  b.data.reserve(indices.size() * shape.size());
  for (auto i : indices) {
    const auto first = images.begin() + static_cast<std::ptrdiff_t>(i * shape.size());
    b.data.insert(b.data.end(), first,
                  first + static_cast<std::ptrdiff_t>(shape.size()));
  }
  return b;
}

Batch Dataset::all() const {
  return Batch{size(), shape, images};
}

SyntheticData make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.n_classes == 0 || spec.channels == 0 || spec.image_size == 0 ||
      spec.n_train == 0 || spec.n_val == 0) {
    throw ConfigError("dataset: counts and sizes must be >= 1");
  }
  if (!(spec.noise >= 0.0)) throw ConfigError("dataset: noise must be >= 0");

  std::mt19937_64 rng(spec.seed);
  const ActShape shape{spec.channels, spec.image_size, spec.image_size};
  const std::size_t hw = spec.image_size;

  std::uniform_real_distribution<double> proto_dist(-0.6, 0.6);
  std::vector<std::vector<double>> prototypes(spec.n_classes,
                                              std::vector<double>(shape.size()));
  for (auto& p : prototypes) {
    for (auto& v : p) v = proto_dist(rng);
  }

  std::normal_distribution<double> noise(0.0, spec.noise);
  std::uniform_int_distribution<int> shift(-1, 1);

  auto generate = [&](std::size_t count) {
    Dataset d;
    d.shape = shape;
    d.n_classes = spec.n_classes;
    d.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      d.labels[i] = static_cast<int>(i % spec.n_classes);
    }
    std::shuffle(d.labels.begin(), d.labels.end(), rng);
    d.images.resize(count * shape.size());
    for (std::size_t i = 0; i < count; ++i) {
      const auto& proto = prototypes[static_cast<std::size_t>(d.labels[i])];
      const int sy = shift(rng);
      const int sx = shift(rng);
      double* img = d.images.data() + i * shape.size();
      for (std::size_t c = 0; c < shape.channels; ++c) {
        for (std::size_t y = 0; y < hw; ++y) {
          for (std::size_t x = 0; x < hw; ++x) {
            const auto src_y = (y + hw + static_cast<std::size_t>(sy + 1) - 1) % hw;
            const auto src_x = (x + hw + static_cast<std::size_t>(sx + 1) - 1) % hw;
            const double v = proto[(c * hw + src_y) * hw + src_x] + noise(rng);
            img[(c * hw + y) * hw + x] = std::clamp(v, kPixelMin, kPixelMax);
          }
        }
      }
    }
    return d;
  };

  SyntheticData out;
  out.train = generate(spec.n_train);
  out.val = generate(spec.n_val);
  return out;
}

}  // namespace sparsetrain
