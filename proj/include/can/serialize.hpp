#pragma once

// Little-endian binary container used by checkpoints: a magic tag, a format
// version, a payload of typed records and a trailing CRC-32 of everything before it.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "can/error.hpp"
#include "can/tensor.hpp"

namespace can {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

inline std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes, std::uint32_t crc = 0) {
  return static_cast<std::uint32_t>(
      ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class BinaryWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  template <typename T>
  void tensor(const Tensor<T>& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (T v : t.data()) f64(static_cast<double>(v));
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

  /// Appends the CRC-32 trailer and writes the file.
  void write_file(const std::filesystem::path& path) const {
    std::vector<std::uint8_t> out = buf_;
    const std::uint32_t crc = crc32_bytes(out);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&crc);
    out.insert(out.end(), p, p + sizeof crc);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw IoError("failed writing " + path.string() + " (disk full?)");
  }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class BinaryReader {
 public:
  /// Reads a file written by BinaryWriter and verifies its trailer.
  static BinaryReader from_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(std::uint32_t)) {
      throw IoError("corrupt file " + path.string() + ": truncated");
    }
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
    bytes.resize(bytes.size() - sizeof stored);
    if (crc32_bytes(bytes) != stored) {
      throw IoError("corrupt file " + path.string() + ": checksum mismatch (truncated or damaged)");
    }
    return BinaryReader(std::move(bytes), path.string());
  }

  BinaryReader(std::vector<std::uint8_t> bytes, std::string origin)
      : buf_(std::move(bytes)), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > remaining()) corrupt("string length exceeds file");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  template <typename T>
  Tensor<T> tensor() {
    const std::uint64_t rank = u64();
    if (rank > 8) corrupt("implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    const std::size_t count = shape_size(shape);
    if (count * sizeof(double) > remaining()) corrupt("tensor exceeds file");
    std::vector<T> data(count);
    for (auto& v : data) v = static_cast<T>(f64());
    return Tensor<T>(std::move(shape), std::move(data));
  }

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == buf_.size(); }
  [[noreturn]] void corrupt(const std::string& why) const {
    throw IoError("corrupt file " + origin_ + ": " + why);
  }

 private:
  void raw(void* p, std::size_t n) {
    if (n > remaining()) corrupt("unexpected end of data");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace can
