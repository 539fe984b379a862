#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "famadapt/tensor.hpp"

namespace famadapt {

// Little-endian binary encoding with a running fnv1a checksum, so files are
// byte-identical across platforms and corruption is detected on read. The
// checksum covers every payload byte and is appended by finish().
class BinaryWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(const std::string& s);
  void doubles(const std::vector<double>& v);

  // Appends the checksum and writes everything to `path`.
  void finish(const std::string& path);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class BinaryReader {
 public:
  // Loads the file, verifies the trailing checksum, positions at the start.
  explicit BinaryReader(const std::string& path);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  std::vector<double> doubles();

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n);

  std::string path_;
  std::vector<std::uint8_t> buf_;  // payload only (checksum stripped)
  std::size_t pos_ = 0;
};

}  // namespace famadapt
