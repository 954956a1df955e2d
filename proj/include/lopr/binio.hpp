#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lopr/errors.hpp"

namespace lopr {

// Little-endian binary writer/reader. The host is little-endian; values are
// written byte-by-byte so the format stays fixed regardless.
class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : os_(path, std::ios::binary) {
    if (!os_) throw Error("cannot open " + path + " for writing");
    path_ = path;
  }

  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    offset_ += n;
  }

  template <typename T>
  void scalar(T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes(buf, sizeof(T));
  }

  void u8(std::uint8_t v) { scalar(v); }
  void u16(std::uint16_t v) { scalar(v); }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }
  void f64(double v) { scalar(v); }

  void close() {
    os_.close();
    if (!os_) throw Error("write to " + path_ + " failed");
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::ofstream os_;
  std::string path_;
  std::uint64_t offset_ = 0;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : is_(path, std::ios::binary) {
    if (!is_) throw Error("cannot open " + path + " for reading");
  }

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError("truncated file", offset_);
    }
    offset_ += n;
  }

  template <typename T>
  T scalar() {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  float f32() { return scalar<float>(); }
  double f64() { return scalar<double>(); }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  bool at_eof() {
    return is_.peek() == std::char_traits<char>::eof();
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::ifstream is_;
  std::uint64_t offset_ = 0;
};

}  // namespace lopr
