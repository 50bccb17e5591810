#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sparsetrain/model.hpp"
#include "sparsetrain/tensor.hpp"

namespace sparsetrain {

// Kernel-sparse layout for CK-pruned layers: only surviving R x S kernels
// are stored, indexed by (k, c) in ascending (c, k) order.
struct CKSparseLayer {
  ConvShape shape;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> surviving_kernels;  // (k, c)
  std::vector<double> payload;

  bool operator==(const CKSparseLayer&) const = default;
};

inline constexpr std::uint8_t kEmptySlot = 255;

// Fixed-budget layout for window-pruned layers: every kernel owns exactly
// max_non_zero (position, value) slots; unused slots hold kEmptySlot.
struct WindowSlot {
  std::uint8_t position = kEmptySlot;
  double value = 0.0;

  bool operator==(const WindowSlot&) const = default;
};

struct WindowSparseLayer {
  ConvShape shape;
  std::uint32_t max_non_zero = 0;
  std::vector<WindowSlot> slots;  // kernel-major, [k][c][slot]

  bool operator==(const WindowSparseLayer&) const = default;
};

// Requires a kernel-uniform mask; throws FormatError otherwise.
CKSparseLayer compress_ck(const ConvWeight& w, const PruneMask& m);
ConvWeight decompress_ck(const CKSparseLayer& s);

// Requires every kernel to keep at most max_non_zero bits.
WindowSparseLayer compress_window(const ConvWeight& w, const PruneMask& m,
                                  std::size_t max_non_zero);
ConvWeight decompress_window(const WindowSparseLayer& s);

// "CKSP" | version u32 | K C R S u32 | count u32 | (k u32, c u32) x count |
// f64 payload
std::vector<std::uint8_t> serialize(const CKSparseLayer& s);
CKSparseLayer deserialize_ck(std::span<const std::uint8_t> bytes);

// "WNSP" | version u32 | K C R S u32 | max_non_zero u32 |
// (position u8, value f64) x K*C*max_non_zero
std::vector<std::uint8_t> serialize(const WindowSparseLayer& s);
WindowSparseLayer deserialize_window(std::span<const std::uint8_t> bytes);

struct MacCount {
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
};

// Per-sample multiply-accumulate count of conv and FC layers; sparse counts
// scale each layer by its surviving-weight fraction under its mask.
MacCount multiply_count(const ToyModel& model);

}  // namespace sparsetrain
