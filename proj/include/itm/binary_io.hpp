#pragma once

// Little-endian serialization helpers shared by every on-disk format
// (ITMF, ITDF, ITSM, ITRR, ITMW).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "itm/error.hpp"

namespace itm {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void magic(std::string_view tag) { buf_.append(tag); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  // u32 byte length followed by the bytes.
  void str(std::string_view s);
  void raw(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }

  const std::string& bytes() const { return buf_; }
  void write_file(const std::filesystem::path& path) const;

 private:
  std::string buf_;
};

class ByteReader {
 public:
  // `what` names the artifact in error messages ("feature file", ...).
  ByteReader(std::string data, std::string what)
      : data_(std::move(data)), what_(std::move(what)) {}

  static ByteReader from_file(const std::filesystem::path& path,
                              std::string what);

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();
  std::string str();
  void raw(void* out, std::size_t n);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// FNV-1a, 64-bit. Used for provenance checksums, not security.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace itm
