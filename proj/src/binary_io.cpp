#include "itm/binary_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace itm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "io";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kProvenance: return "provenance";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

void ByteWriter::write_file(const std::filesystem::path& path) const {
  write_text_file(path, buf_);
}

ByteReader ByteReader::from_file(const std::filesystem::path& path,
                                 std::string what) {
  return ByteReader(read_text_file(path), std::move(what));
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    fail(ErrorKind::kIo, what_ + ": truncated at byte " + std::to_string(pos_) +
                             " (need " + std::to_string(n) + ", have " +
                             std::to_string(remaining()) + ")");
  }
}

void ByteReader::expect_magic(std::string_view tag) {
  need(tag.size());
  if (std::string_view(data_).substr(pos_, tag.size()) != tag) {
    fail(ErrorKind::kValidation,
         what_ + ": bad magic, expected \"" + std::string(tag) + "\"");
  }
  pos_ += tag.size();
}

std::uint8_t ByteReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

float ByteReader::f32() {
  float v;
  raw(&v, sizeof v);
  return v;
}

double ByteReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::raw(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    fail(ErrorKind::kValidation, what_ + ": " + std::to_string(remaining()) +
                                     " trailing bytes after payload");
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorKind::kIo, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace itm
