#pragma once

// Little-endian serialization helpers for the binary containers.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spinet/error.hpp"

namespace spinet::detail {

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void text(std::string_view s) { bytes(s.data(), s.size()); }
  template <class U>
  void uint(U value) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) buffer_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }
  std::vector<std::uint8_t>& buffer() { return buffer_; }

 private:
  std::vector<std::uint8_t> buffer_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& data, std::string context) : data_(data), context_(std::move(context)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, FormatError::Kind kind = FormatError::Kind::truncated) const {
    if (remaining() < n) {
      throw FormatError(kind, context_ + ": unexpected end of data at byte " + std::to_string(pos_));
    }
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  // Consumes `magic`. A short input that is a prefix of it counts as
  // truncated; anything else that differs is a bad magic.
  void expect_magic(std::string_view magic, const std::string& what) {
    const std::size_t n = std::min(remaining(), magic.size());
    if (std::string_view(reinterpret_cast<const char*>(data_.data() + pos_), n) != magic.substr(0, n)) {
      throw FormatError(FormatError::Kind::bad_magic, "not a " + what + " file (bad magic)");
    }
    need(magic.size());
    pos_ += magic.size();
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  const std::uint8_t* cursor() const { return data_.data() + pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& data_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace spinet::detail
