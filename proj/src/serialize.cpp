#include "famadapt/serialize.hpp"

#include <cstring>
#include <fstream>

#include "famadapt/error.hpp"
#include "famadapt/rng.hpp"

namespace famadapt {

namespace {

std::uint64_t checksum_of(const std::uint8_t* data, std::size_t n) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(data), n));
}

}  // namespace

void BinaryWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void BinaryWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

void BinaryWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  u64(bits);
}

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void BinaryWriter::doubles(const std::vector<double>& v) {
  u64(v.size());
  for (double d : v) f64(d);
}

void BinaryWriter::finish(const std::string& path) {
  u64(checksum_of(buf_.data(), buf_.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
  if (!out) throw IoError("write failed: " + path);
}

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (buf_.size() < 8) throw IoError("truncated file: " + path);
  std::uint64_t stored = 0;
  for (int i = 7; i >= 0; --i) stored = (stored << 8) | buf_[buf_.size() - 8 + i];
  buf_.resize(buf_.size() - 8);
  if (checksum_of(buf_.data(), buf_.size()) != stored) {
    throw IoError("checksum mismatch (file corrupted): " + path);
  }
}

void BinaryReader::need(std::size_t n) {
  if (pos_ + n > buf_.size()) throw IoError("unexpected end of file: " + path_);
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf_[pos_ + static_cast<std::size_t>(i)];
  pos_ += 8;
  return v;
}

std::int64_t BinaryReader::i64() { return static_cast<std::int64_t>(u64()); }

double BinaryReader::f64() {
  std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string BinaryReader::str() {
  std::uint64_t n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<double> BinaryReader::doubles() {
  std::uint64_t n = u64();
  std::vector<double> v(n);
  for (auto& d : v) d = f64();
  return v;
}

}  // namespace famadapt
