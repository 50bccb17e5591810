#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "sparsetrain/dataset.hpp"
#include "sparsetrain/model.hpp"

namespace sparsetrain {

struct AttackSpec {
  std::vector<double> epsilons{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  double clamp_lo = kPixelMin;
  double clamp_hi = kPixelMax;

  void validate() const;
};

// Untargeted FGSM: x' = clamp(x + eps * sign(d loss / d x), lo, hi) using
// the true labels; sign(0) = 0.
Batch fgsm_perturb(const ToyModel& model, const Batch& batch,
                   std::span<const int> labels, double epsilon, double lo,
                   double hi);

struct RobustnessPoint {
  double epsilon = 0.0;
  double top1 = 0.0;
};

// Top-1 on the full validation split attacked at each epsilon.
std::vector<RobustnessPoint> robustness_sweep(const ToyModel& model,
                                              const Dataset& val,
                                              const AttackSpec& spec,
                                              std::size_t batch_size = 256);

// `epsilon,top1` CSV.
void write_robustness_csv(std::ostream& os,
                          const std::vector<RobustnessPoint>& points);
std::vector<RobustnessPoint> read_robustness_csv(std::istream& is);

}  // namespace sparsetrain
