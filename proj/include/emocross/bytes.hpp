#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "emocross/errors.hpp"

namespace emocross::detail {

// All on-disk formats in this project are little-endian.
static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian");

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const std::size_t n = bytes.size();
    bytes.resize(n + sizeof(T));
    std::memcpy(bytes.data() + n, &v, sizeof(T));
  }
  void put_str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_doubles(const double* p, std::size_t n) {
    const std::size_t at = bytes.size();
    bytes.resize(at + n * sizeof(double));
    std::memcpy(bytes.data() + at, p, n * sizeof(double));
  }
  std::vector<std::uint8_t> bytes;
};

// Throws the caller-supplied error type on overrun so each format reports its
// own corrupt-file kind.
template <typename ErrorT>
class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > n_) throw ErrorT("truncated file");
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    const std::uint32_t len = get<std::uint32_t>();
    if (pos_ + len > n_) throw ErrorT("truncated string");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  void get_doubles(double* out, std::size_t n) {
    if (pos_ + n * sizeof(double) > n_) throw ErrorT("truncated payload");
    std::memcpy(out, p_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace emocross::detail
