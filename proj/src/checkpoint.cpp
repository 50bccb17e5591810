#include "sparsetrain/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "sparsetrain/errors.hpp"

namespace sparsetrain {

namespace le {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) {
  out.push_back(v);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

void put_magic(std::vector<std::uint8_t>& out, const char (&magic)[5]) {
  out.insert(out.end(), magic, magic + 4);
}

void Reader::need(std::size_t n) const {
  if (n > remaining()) {
    throw FormatError("truncated buffer: need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_) + ", have " +
                      std::to_string(remaining()));
  }
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  }
  pos_ += 4;
  return v;
}

double Reader::f64() {
  need(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  }
  pos_ += 8;
  return std::bit_cast<double>(bits);
}

void Reader::expect_magic(const char (&magic)[5]) {
  need(4);
  if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected \"") + magic + "\"");
  }
  pos_ += 4;
}

}  // namespace le

std::vector<std::uint8_t> encode_tensors(const std::vector<Tensor>& tensors) {
  std::vector<std::uint8_t> out;
  le::put_magic(out, "CAMP");
  le::put_u32(out, kCheckpointVersion);
  le::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    le::put_u32(out, static_cast<std::uint32_t>(t.dims().size()));
    for (auto d : t.dims()) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) le::put_f64(out, v);
  }
  return out;
}

std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes) {
  le::Reader in(bytes);
  in.expect_magic("CAMP");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  const auto count = in.u32();
  std::vector<Tensor> tensors;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto rank = in.u32();
    if (rank == 0 || static_cast<std::size_t>(rank) * 4 > in.remaining()) {
      throw FormatError("tensor " + std::to_string(n) + ": bad rank " +
                        std::to_string(rank));
    }
    Dims dims(rank);
    std::size_t total = 1;
    for (auto& d : dims) {
      d = in.u32();
      if (d == 0) throw FormatError("zero-length dimension");
      if (total > in.remaining() / d) {
        throw FormatError("tensor " + std::to_string(n) +
                          ": payload exceeds buffer");
      }
      total *= d;
    }
    if (total > in.remaining() / 8) {
      throw FormatError("tensor " + std::to_string(n) +
                        ": payload exceeds buffer");
    }
    std::vector<double> values(total);
    for (auto& v : values) v = in.f64();
    tensors.emplace_back(std::move(dims), std::move(values));
  }
  if (!in.done()) throw FormatError("trailing bytes after last tensor");
  return tensors;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for " + path.string());
}

void write_tensors(const std::filesystem::path& path,
                   const std::vector<Tensor>& tensors) {
  write_file_bytes(path, encode_tensors(tensors));
}

std::vector<Tensor> read_tensors(const std::filesystem::path& path) {
  return decode_tensors(read_file_bytes(path));
}

}  // namespace sparsetrain
