#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "sfde/error.hpp"

namespace sfde::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    char raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    bytes_.append(raw, sizeof(U));
  }
  void put_bytes(std::string_view s) { bytes_.append(s); }
  void put_string16(std::string_view s) {
    if (s.size() > 0xFFFF) throw ValidationError("string field longer than 65535 bytes");
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    put_bytes(s);
  }
  void put_string32(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view get_bytes(std::size_t n, const char* field) {
    need(n, field);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string16(const char* field) { return std::string(get_bytes(get<std::uint16_t>(field), field)); }
  std::string get_string32(const char* field) { return std::string(get_bytes(get<std::uint32_t>(field), field)); }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& what() const { return what_; }

 private:
  void need(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatErrorCode::Truncated, what_ + ": file ends inside " + field + " at byte " +
                                                        std::to_string(pos_) + " (need " + std::to_string(n) +
                                                        " bytes, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace sfde::io
