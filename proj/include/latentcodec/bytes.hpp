#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "latentcodec/errors.hpp"

// Little-endian byte serialization helpers shared by the LTF/DCS/DCM
// container formats.

namespace lc::bytes {

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_i32(std::vector<uint8_t>& out, int32_t v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

inline void put_bytes(std::vector<uint8_t>& out, std::span<const uint8_t> b) {
  out.insert(out.end(), b.begin(), b.end());
}

inline void put_magic(std::vector<uint8_t>& out, const char magic[5]) {
  out.insert(out.end(), magic, magic + 4);
}

// Bounds-checked sequential reader; any overrun is a corrupt stream.
class Reader {
 public:
  explicit Reader(std::span<const uint8_t> data) : data_(data) {}

  size_t remaining() const { return data_.size() - pos_; }
  size_t pos() const { return pos_; }

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }

  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(data_[pos_]) | uint16_t(data_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  int32_t i32() { return std::bit_cast<int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::vector<uint8_t> raw(size_t n) {
    need(n);
    std::vector<uint8_t> out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }

  void expect_magic(const char magic[5], const char* what) {
    need(4);
    if (std::memcmp(data_.data() + pos_, magic, 4) != 0) {
      throw CorruptStreamError(std::string("bad magic, expected ") + magic +
                               " in " + what);
    }
    pos_ += 4;
  }

  void expect_end(const char* what) {
    if (remaining() != 0) {
      throw CorruptStreamError(std::string("trailing bytes in ") + what);
    }
  }

 private:
  void need(size_t n) {
    if (pos_ + n > data_.size()) throw CorruptStreamError("truncated data");
  }

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const uint8_t> data);

}  // namespace lc::bytes
