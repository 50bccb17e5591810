#include "sparsetrain/compressed.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>

#include "sparsetrain/checkpoint.hpp"
#include "sparsetrain/errors.hpp"

namespace sparsetrain {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void require_mask_shape(const ConvWeight& w, const PruneMask& m) {
  if (m.dims() != w.dims()) {
    throw ContractError("compress: mask shape " + dims_to_string(m.dims()) +
                        " does not match weights " + dims_to_string(w.dims()));
  }
}

void validate_shape(const ConvShape& s) {
  if (s.out_channels == 0 || s.in_channels == 0 || s.kernel_h == 0 ||
      s.kernel_w == 0) {
    throw FormatError("compressed layer: zero dimension");
  }
}

// Upper bound on decoded layer size, so a corrupted header cannot request
// an arbitrarily large allocation.
constexpr std::size_t kMaxElements = std::size_t{1} << 28;

ConvShape read_shape(le::Reader& in) {
  ConvShape s;
  s.out_channels = in.u32();
  s.in_channels = in.u32();
  s.kernel_h = in.u32();
  s.kernel_w = in.u32();
  validate_shape(s);
  std::size_t total = 1;
  for (std::size_t d : {s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}) {
    if (d > kMaxElements / total) {
      throw FormatError("compressed layer: shape too large");
    }
    total *= d;
  }
  return s;
}

void put_shape(std::vector<std::uint8_t>& out, const ConvShape& s) {
  le::put_u32(out, static_cast<std::uint32_t>(s.out_channels));
  le::put_u32(out, static_cast<std::uint32_t>(s.in_channels));
  le::put_u32(out, static_cast<std::uint32_t>(s.kernel_h));
  le::put_u32(out, static_cast<std::uint32_t>(s.kernel_w));
}

}  // namespace

// ------------------------------------------------------------------ CK

CKSparseLayer compress_ck(const ConvWeight& w, const PruneMask& m) {
  require_mask_shape(w, m);
  const auto& s = w.shape();
  const std::size_t rs = s.kernel_size();
  CKSparseLayer out;
  out.shape = s;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (std::size_t k = 0; k < s.out_channels; ++k) {
      const std::size_t base = w.index(k, c, 0, 0);
      const std::uint8_t first = m[base];
      for (std::size_t i = 1; i < rs; ++i) {
        if (m[base + i] != first) {
          throw FormatError("compress_ck: mask is not kernel-uniform at (k=" +
                            std::to_string(k) + ", c=" + std::to_string(c) +
                            ")");
        }
      }
      if (!first) continue;
      out.surviving_kernels.emplace_back(static_cast<std::uint32_t>(k),
                                         static_cast<std::uint32_t>(c));
      const auto kern = w.kernel(k, c);
      out.payload.insert(out.payload.end(), kern.begin(), kern.end());
    }
  }
  return out;
}

ConvWeight decompress_ck(const CKSparseLayer& s) {
  validate_shape(s.shape);
  const std::size_t rs = s.shape.kernel_size();
  if (s.payload.size() != rs * s.surviving_kernels.size()) {
    throw FormatError("decompress_ck: payload length " +
                      std::to_string(s.payload.size()) + " != R*S*kernels");
  }
  if (!all_finite(s.payload)) {
    throw FormatError("decompress_ck: non-finite payload");
  }
  ConvWeight w(s.shape);
  for (std::size_t n = 0; n < s.surviving_kernels.size(); ++n) {
    const auto [k, c] = s.surviving_kernels[n];
    if (k >= s.shape.out_channels || c >= s.shape.in_channels) {
      throw FormatError("decompress_ck: kernel index out of range");
    }
    if (n > 0) {
      const auto [pk, pc] = s.surviving_kernels[n - 1];
      if (std::pair(c, k) <= std::pair(pc, pk)) {
        throw FormatError("decompress_ck: kernel indices not strictly ascending");
      }
    }
    std::copy_n(s.payload.begin() + static_cast<std::ptrdiff_t>(n * rs), rs,
                w.kernel(k, c).begin());
  }
  return w;
}

std::vector<std::uint8_t> serialize(const CKSparseLayer& s) {
  std::vector<std::uint8_t> out;
  le::put_magic(out, "CKSP");
  le::put_u32(out, kFormatVersion);
  put_shape(out, s.shape);
  le::put_u32(out, static_cast<std::uint32_t>(s.surviving_kernels.size()));
  for (const auto& [k, c] : s.surviving_kernels) {
    le::put_u32(out, k);
    le::put_u32(out, c);
  }
  for (double v : s.payload) le::put_f64(out, v);
  return out;
}

CKSparseLayer deserialize_ck(std::span<const std::uint8_t> bytes) {
  le::Reader in(bytes);
  in.expect_magic("CKSP");
  if (in.u32() != kFormatVersion) throw FormatError("CKSP: unsupported version");
  CKSparseLayer s;
  s.shape = read_shape(in);
  const std::size_t count = in.u32();
  const std::size_t rs = s.shape.kernel_size();
  if (count > s.shape.kernel_count() ||
      count > in.remaining() / (8 + 8 * rs)) {
    throw FormatError("CKSP: kernel count exceeds buffer or shape");
  }
  s.surviving_kernels.resize(count);
  for (auto& [k, c] : s.surviving_kernels) {
    k = in.u32();
    c = in.u32();
  }
  s.payload.resize(count * rs);
  for (auto& v : s.payload) v = in.f64();
  if (!in.done()) throw FormatError("CKSP: trailing bytes");
  decompress_ck(s);  // structural validation
  return s;
}

// -------------------------------------------------------------- window

WindowSparseLayer compress_window(const ConvWeight& w, const PruneMask& m,
                                  std::size_t max_non_zero) {
  require_mask_shape(w, m);
  const auto& s = w.shape();
  const std::size_t rs = s.kernel_size();
  if (rs > kEmptySlot) {
    throw ContractError("compress_window: kernel larger than 255 weights");
  }
  if (max_non_zero == 0 || max_non_zero > rs) {
    throw ContractError("compress_window: max_non_zero must lie in [1, R*S]");
  }
  WindowSparseLayer out;
  out.shape = s;
  out.max_non_zero = static_cast<std::uint32_t>(max_non_zero);
  out.slots.reserve(s.kernel_count() * max_non_zero);
  for (std::size_t k = 0; k < s.out_channels; ++k) {
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      const std::size_t base = w.index(k, c, 0, 0);
      std::size_t used = 0;
      for (std::size_t i = 0; i < rs; ++i) {
        if (!m[base + i]) continue;
        if (++used > max_non_zero) {
          throw FormatError("compress_window: kernel (k=" + std::to_string(k) +
                            ", c=" + std::to_string(c) + ") keeps more than " +
                            std::to_string(max_non_zero) + " weights");
        }
        out.slots.push_back({static_cast<std::uint8_t>(i), w.values()[base + i]});
      }
      for (; used < max_non_zero; ++used) out.slots.push_back({});
    }
  }
  return out;
}

ConvWeight decompress_window(const WindowSparseLayer& s) {
  validate_shape(s.shape);
  const std::size_t rs = s.shape.kernel_size();
  const std::size_t mnz = s.max_non_zero;
  if (rs > kEmptySlot || mnz == 0 || mnz > rs) {
    throw FormatError("decompress_window: bad max_non_zero for kernel size");
  }
  if (s.slots.size() != s.shape.kernel_count() * mnz) {
    throw FormatError("decompress_window: slot count mismatch");
  }
  ConvWeight w(s.shape);
  for (std::size_t kern = 0; kern < s.shape.kernel_count(); ++kern) {
    const std::size_t k = kern / s.shape.in_channels;
    const std::size_t c = kern % s.shape.in_channels;
    auto out = w.kernel(k, c);
    int prev = -1;
    bool padding = false;
    for (std::size_t j = 0; j < mnz; ++j) {
      const auto& slot = s.slots[kern * mnz + j];
      if (slot.position == kEmptySlot) {
        if (slot.value != 0.0) {
          throw FormatError("decompress_window: empty slot carries a value");
        }
        padding = true;
        continue;
      }
      if (padding) {
        throw FormatError("decompress_window: occupied slot after padding");
      }
      if (slot.position >= rs || static_cast<int>(slot.position) <= prev) {
        throw FormatError("decompress_window: bad slot position");
      }
      if (!std::isfinite(slot.value)) {
        throw FormatError("decompress_window: non-finite value");
      }
      prev = slot.position;
      out[slot.position] = slot.value;
    }
  }
  return w;
}

std::vector<std::uint8_t> serialize(const WindowSparseLayer& s) {
  std::vector<std::uint8_t> out;
  le::put_magic(out, "WNSP");
  le::put_u32(out, kFormatVersion);
  put_shape(out, s.shape);
  le::put_u32(out, s.max_non_zero);
  for (const auto& slot : s.slots) {
    le::put_u8(out, slot.position);
    le::put_f64(out, slot.value);
  }
  return out;
}

WindowSparseLayer deserialize_window(std::span<const std::uint8_t> bytes) {
  le::Reader in(bytes);
  in.expect_magic("WNSP");
  if (in.u32() != kFormatVersion) throw FormatError("WNSP: unsupported version");
  WindowSparseLayer s;
  s.shape = read_shape(in);
  s.max_non_zero = in.u32();
  const std::size_t rs = s.shape.kernel_size();
  if (s.max_non_zero == 0 || s.max_non_zero > rs || rs > kEmptySlot) {
    throw FormatError("WNSP: bad max_non_zero");
  }
  const std::size_t kernels = s.shape.kernel_count();
  if (kernels > in.remaining() / (9 * s.max_non_zero)) {
    throw FormatError("WNSP: slots exceed buffer");
  }
  s.slots.resize(kernels * s.max_non_zero);
  for (auto& slot : s.slots) {
    slot.position = in.u8();
    slot.value = in.f64();
  }
  if (!in.done()) throw FormatError("WNSP: trailing bytes");
  decompress_window(s);  // structural validation
  return s;
}

// ------------------------------------------------------ MAC accounting

MacCount multiply_count(const ToyModel& model) {
  MacCount mc;
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& out = model.shape_before(i + 1);
    if (const auto* conv = std::get_if<ConvLayer>(&layers[i])) {
      const std::uint64_t positions = out.height * out.width;
      mc.dense_macs += conv->weight.size() * positions;
      mc.sparse_macs += conv->mask.count_kept() * positions;
    } else if (const auto* fc = std::get_if<FCLayer>(&layers[i])) {
      mc.dense_macs += fc->weight.size();
      mc.sparse_macs += fc->mask.count_kept();
    }
  }
  return mc;
}

}  // namespace sparsetrain
