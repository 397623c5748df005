#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dcat/errors.hpp"

namespace dcat {

// Little-endian binary file writer/reader used by checkpoints and resume
// bundles. Explicit byte assembly keeps the on-disk layout host-independent.
class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw UsageError("cannot open for writing: " + path);
  }

  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), n); }

  void u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }

  void u64(uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }

  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }

  void f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }

  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void f64_array(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) f64(p[i]);
  }

  bool good() const { return out_.good(); }

 private:
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw UsageError("cannot open for reading: " + path);
  }

  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), n);
    if (static_cast<size_t>(in_.gcount()) != n) {
      throw UsageError("truncated file: " + path_);
    }
  }

  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  int64_t i64() { return static_cast<int64_t>(u64()); }

  double f64() {
    const uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }

  std::string str() {
    const uint32_t n = u32();
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace dcat
