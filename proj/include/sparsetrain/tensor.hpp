#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sparsetrain {

using Dims = std::vector<std::size_t>;

std::size_t element_count(const Dims& dims);
std::string dims_to_string(const Dims& dims);

// Generic dense row-major container. Used for checkpoints, momentum
// buffers and anything that does not need a named layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> values);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  Dims dims_;
  std::vector<double> values_;
};

struct ConvShape {
  std::size_t out_channels = 1;  // K
  std::size_t in_channels = 1;   // C
  std::size_t kernel_h = 1;      // R
  std::size_t kernel_w = 1;      // S

  std::size_t kernel_size() const { return kernel_h * kernel_w; }
  std::size_t kernel_count() const { return out_channels * in_channels; }
  std::size_t size() const { return kernel_count() * kernel_size(); }
  Dims dims() const { return {out_channels, in_channels, kernel_h, kernel_w}; }

  bool operator==(const ConvShape&) const = default;
};

// Convolution weights laid out [k][c][r][s], row-major, so every (k, c)
// kernel is one contiguous block of R*S values.
class ConvWeight {
 public:
  ConvWeight() = default;
  explicit ConvWeight(ConvShape shape, double fill = 0.0);
  ConvWeight(ConvShape shape, std::vector<double> values);

  const ConvShape& shape() const { return shape_; }
  Dims dims() const { return shape_.dims(); }
  std::size_t size() const { return values_.size(); }

  std::size_t index(std::size_t k, std::size_t c, std::size_t r,
                    std::size_t s) const {
    return ((k * shape_.in_channels + c) * shape_.kernel_h + r) *
               shape_.kernel_w +
           s;
  }
  double& at(std::size_t k, std::size_t c, std::size_t r, std::size_t s) {
    return values_[index(k, c, r, s)];
  }
  double at(std::size_t k, std::size_t c, std::size_t r, std::size_t s) const {
    return values_[index(k, c, r, s)];
  }

  std::span<double> kernel(std::size_t k, std::size_t c);
  std::span<const double> kernel(std::size_t k, std::size_t c) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  Tensor to_tensor() const;
  static ConvWeight from_tensor(const Tensor& t);

  bool operator==(const ConvWeight&) const = default;

 private:
  ConvShape shape_;
  std::vector<double> values_;
};

// Fully connected weights: rows index input neurons, columns index output
// neurons. Row-major.
class FCWeight {
 public:
  FCWeight() = default;
  FCWeight(std::size_t rows, std::size_t cols, double fill = 0.0);
  FCWeight(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Dims dims() const { return {rows_, cols_}; }
  std::size_t size() const { return values_.size(); }

  double& at(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
  double at(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  Tensor to_tensor() const;
  static FCWeight from_tensor(const Tensor& t);

  bool operator==(const FCWeight&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Binary keep (1) / prune (0) mask congruent with one weight tensor.
class PruneMask {
 public:
  PruneMask() = default;
  explicit PruneMask(Dims dims, std::uint8_t fill = 1);
  PruneMask(Dims dims, std::vector<std::uint8_t> bits);

  static PruneMask ones(Dims dims) { return PruneMask(std::move(dims), 1); }
  static PruneMask zeros(Dims dims) { return PruneMask(std::move(dims), 0); }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return bits_.size(); }

  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, bool keep) { bits_[i] = keep ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }

  std::size_t count_kept() const;
  std::size_t count_pruned() const { return size() - count_kept(); }

  Tensor to_tensor() const;
  static PruneMask from_tensor(const Tensor& t);

  bool operator==(const PruneMask&) const = default;

 private:
  Dims dims_;
  std::vector<std::uint8_t> bits_;
};

// K x C matrix (row-major, k major) of per-kernel maximum magnitudes.
std::vector<double> kernel_max(const ConvWeight& w);

Tensor apply_mask(const Tensor& w, const PruneMask& m);
ConvWeight apply_mask(const ConvWeight& w, const PruneMask& m);
FCWeight apply_mask(const FCWeight& w, const PruneMask& m);

// In-place variant used on the training hot path.
void apply_mask_inplace(std::span<double> values, const PruneMask& m);

// Fraction of exactly-zero entries over all listed tensors.
double measured_sparsity(std::span<const std::span<const double>> tensors);

bool all_finite(std::span<const double> values);

}  // namespace sparsetrain
