#include "sparsetrain/adversarial.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

void AttackSpec::validate() const {
  if (epsilons.empty()) throw ConfigError("attack: epsilons must be nonempty");
  for (double e : epsilons) {
    if (!(e >= 0.0)) throw ConfigError("attack: epsilons must be >= 0");
  }
  if (!std::is_sorted(epsilons.begin(), epsilons.end())) {
    throw ConfigError("attack: epsilons must be sorted ascending");
  }
  if (!(clamp_lo < clamp_hi)) {
    throw ConfigError("attack: clamp_range must satisfy lo < hi");
  }
}

Batch fgsm_perturb(const ToyModel& model, const Batch& batch,
                   std::span<const int> labels, double epsilon, double lo,
                   double hi) {
  if (!(epsilon >= 0.0)) throw ContractError("fgsm_perturb: epsilon < 0");
  if (epsilon == 0.0) return batch;
  // The mean loss only rescales each sample's gradient by 1/n, which leaves
  // the per-sample sign unchanged.
  const Gradients g = backward(model, batch, labels);
  Batch out = batch;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double d = g.input[i];
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    out.data[i] = std::clamp(batch.data[i] + epsilon * sign, lo, hi);
  }
  return out;
}

std::vector<RobustnessPoint> robustness_sweep(const ToyModel& model,
                                              const Dataset& val,
                                              const AttackSpec& spec,
                                              std::size_t batch_size) {
  spec.validate();
  std::vector<RobustnessPoint> points;
  std::vector<std::size_t> idx;
  for (double eps : spec.epsilons) {
    std::size_t correct = 0;
    for (std::size_t start = 0; start < val.size(); start += batch_size) {
      const std::size_t end = std::min(val.size(), start + batch_size);
      idx.resize(end - start);
      std::iota(idx.begin(), idx.end(), start);
      const std::span<const int> labels(val.labels.data() + start, idx.size());
      const Batch clean = val.batch(idx);
      const Batch attacked =
          fgsm_perturb(model, clean, labels, eps, spec.clamp_lo, spec.clamp_hi);
      const auto pred = predict(forward(model, attacked), model.n_classes());
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == labels[i]) ++correct;
      }
    }
    points.push_back(
        {eps, static_cast<double>(correct) / static_cast<double>(val.size())});
  }
  return points;
}

void write_robustness_csv(std::ostream& os,
                          const std::vector<RobustnessPoint>& points) {
  os << "epsilon,top1\n";
  char buf[64];
  for (const auto& p : points) {
    auto r = std::to_chars(buf, buf + sizeof(buf), p.epsilon);
    os << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << ',';
    r = std::to_chars(buf, buf + sizeof(buf), p.top1);
    os << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\n';
  }
}

std::vector<RobustnessPoint> read_robustness_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "epsilon,top1") {
    throw FormatError("robustness CSV: missing or unexpected header");
  }
  std::vector<RobustnessPoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError("robustness CSV: expected two fields");
    }
    RobustnessPoint p;
    const char* b = line.data();
    const char* e = b + line.size();
    auto r1 = std::from_chars(b, b + comma, p.epsilon);
    auto r2 = std::from_chars(b + comma + 1, e, p.top1);
    if (r1.ec != std::errc() || r1.ptr != b + comma || r2.ec != std::errc() ||
        r2.ptr != e) {
      throw FormatError("robustness CSV: bad number in \"" + line + "\"");
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace sparsetrain
