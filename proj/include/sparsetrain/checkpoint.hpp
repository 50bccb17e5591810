#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sparsetrain/tensor.hpp"

namespace sparsetrain {

// Tensor container, little-endian:
//   "CAMP" | version u32 | count u32 | { rank u32 | dims u32 x rank |
//   payload f64 x prod(dims) } x count
// Masks are stored as tensors with 0.0 / 1.0 payloads.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_tensors(const std::vector<Tensor>& tensors);
std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes);

void write_tensors(const std::filesystem::path& path,
                   const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tensors(const std::filesystem::path& path);

// Little-endian primitives shared with the compressed layer formats.
namespace le {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
void put_magic(std::vector<std::uint8_t>& out, const char (&magic)[5]);

// Bounds-checked cursor; every read throws FormatError on truncation.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  double f64();
  void expect_magic(const char (&magic)[5]);

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace sparsetrain
