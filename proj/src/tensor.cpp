#include "sparsetrain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

namespace {

void require_congruent(const Dims& a, const Dims& b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": shape mismatch " +
                        dims_to_string(a) + " vs " + dims_to_string(b));
  }
}

void require_finite(std::span<const double> values, const char* what) {
  if (!all_finite(values)) {
    throw ContractError(std::string(what) + ": non-finite value");
  }
}

}  // namespace

std::size_t element_count(const Dims& dims) {
  if (dims.empty()) return 0;
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Dims dims, double fill)
    : dims_(std::move(dims)), values_(element_count(dims_), fill) {}

Tensor::Tensor(Dims dims, std::vector<double> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  if (values_.size() != element_count(dims_)) {
    throw ContractError("Tensor: value count does not match dims " +
                        dims_to_string(dims_));
  }
}

// ------------------------------------------------------------ ConvWeight

namespace {
void validate_conv_shape(const ConvShape& s) {
  if (s.out_channels == 0 || s.in_channels == 0 || s.kernel_h == 0 ||
      s.kernel_w == 0) {
    throw ContractError("ConvWeight: all dims must be >= 1, got " +
                        dims_to_string(s.dims()));
  }
}
}  // namespace

ConvWeight::ConvWeight(ConvShape shape, double fill)
    : shape_(shape), values_(shape.size(), fill) {
  validate_conv_shape(shape_);
  require_finite(values_, "ConvWeight");
}

ConvWeight::ConvWeight(ConvShape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  validate_conv_shape(shape_);
  if (values_.size() != shape_.size()) {
    throw ContractError("ConvWeight: expected " +
                        std::to_string(shape_.size()) + " values, got " +
                        std::to_string(values_.size()));
  }
  require_finite(values_, "ConvWeight");
}

std::span<double> ConvWeight::kernel(std::size_t k, std::size_t c) {
  return std::span<double>(values_).subspan(index(k, c, 0, 0),
                                            shape_.kernel_size());
}

std::span<const double> ConvWeight::kernel(std::size_t k,
                                           std::size_t c) const {
  return std::span<const double>(values_).subspan(index(k, c, 0, 0),
                                                  shape_.kernel_size());
}

Tensor ConvWeight::to_tensor() const { return Tensor(dims(), values_); }

ConvWeight ConvWeight::from_tensor(const Tensor& t) {
  if (t.dims().size() != 4) {
    throw ContractError("ConvWeight::from_tensor: rank must be 4, got " +
                        dims_to_string(t.dims()));
  }
  const auto& d = t.dims();
  return ConvWeight(ConvShape{d[0], d[1], d[2], d[3]},
                    std::vector<double>(t.values().begin(), t.values().end()));
}

// -------------------------------------------------------------- FCWeight

FCWeight::FCWeight(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw ContractError("FCWeight: rows and cols must be >= 1");
  }
  require_finite(values_, "FCWeight");
}

FCWeight::FCWeight(std::size_t rows, std::size_t cols,
                   std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows == 0 || cols == 0) {
    throw ContractError("FCWeight: rows and cols must be >= 1");
  }
  if (values_.size() != rows * cols) {
    throw ContractError("FCWeight: expected " + std::to_string(rows * cols) +
                        " values, got " + std::to_string(values_.size()));
  }
  require_finite(values_, "FCWeight");
}

Tensor FCWeight::to_tensor() const { return Tensor(dims(), values_); }

FCWeight FCWeight::from_tensor(const Tensor& t) {
  if (t.dims().size() != 2) {
    throw ContractError("FCWeight::from_tensor: rank must be 2, got " +
                        dims_to_string(t.dims()));
  }
  return FCWeight(t.dims()[0], t.dims()[1],
                  std::vector<double>(t.values().begin(), t.values().end()));
}

// ------------------------------------------------------------- PruneMask

PruneMask::PruneMask(Dims dims, std::uint8_t fill)
    : dims_(std::move(dims)), bits_(element_count(dims_), fill ? 1 : 0) {}

PruneMask::PruneMask(Dims dims, std::vector<std::uint8_t> bits)
    : dims_(std::move(dims)), bits_(std::move(bits)) {
  if (bits_.size() != element_count(dims_)) {
    throw ContractError("PruneMask: bit count does not match dims " +
                        dims_to_string(dims_));
  }
  for (auto b : bits_) {
    if (b > 1) throw ContractError("PruneMask: entries must be 0 or 1");
  }
}

std::size_t PruneMask::count_kept() const {
  return static_cast<std::size_t>(
      std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Tensor PruneMask::to_tensor() const {
  std::vector<double> v(bits_.begin(), bits_.end());
  return Tensor(dims_, std::move(v));
}

PruneMask PruneMask::from_tensor(const Tensor& t) {
  std::vector<std::uint8_t> bits;
  bits.reserve(t.size());
  for (double v : t.values()) {
    if (v == 0.0) {
      bits.push_back(0);
    } else if (v == 1.0) {
      bits.push_back(1);
    } else {
      throw FormatError("PruneMask::from_tensor: payload is not 0.0/1.0");
    }
  }
  return PruneMask(t.dims(), std::move(bits));
}

// ------------------------------------------------------------ operations

std::vector<double> kernel_max(const ConvWeight& w) {
  const auto& s = w.shape();
  std::vector<double> out(s.kernel_count(), 0.0);
  for (std::size_t k = 0; k < s.out_channels; ++k) {
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      double m = 0.0;
      for (double v : w.kernel(k, c)) m = std::max(m, std::abs(v));
      out[k * s.in_channels + c] = m;
    }
  }
  return out;
}

void apply_mask_inplace(std::span<double> values, const PruneMask& m) {
  if (values.size() != m.size()) {
    throw ContractError("apply_mask: size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!m[i]) values[i] = 0.0;
  }
}

Tensor apply_mask(const Tensor& w, const PruneMask& m) {
  require_congruent(w.dims(), m.dims(), "apply_mask");
  Tensor out = w;
  apply_mask_inplace(out.values(), m);
  return out;
}

ConvWeight apply_mask(const ConvWeight& w, const PruneMask& m) {
  require_congruent(w.dims(), m.dims(), "apply_mask");
  ConvWeight out = w;
  apply_mask_inplace(out.values(), m);
  return out;
}

FCWeight apply_mask(const FCWeight& w, const PruneMask& m) {
  require_congruent(w.dims(), m.dims(), "apply_mask");
  FCWeight out = w;
  apply_mask_inplace(out.values(), m);
  return out;
}

double measured_sparsity(std::span<const std::span<const double>> tensors) {
  if (tensors.empty()) {
    throw ContractError("measured_sparsity: empty tensor list");
  }
  std::size_t zeros = 0;
  std::size_t total = 0;
  for (const auto& t : tensors) {
    total += t.size();
    zeros += static_cast<std::size_t>(
        std::count(t.begin(), t.end(), 0.0));
  }
  if (total == 0) {
    throw ContractError("measured_sparsity: tensors hold no entries");
  }
  return static_cast<double>(zeros) / static_cast<double>(total);
}

}  // namespace sparsetrain
