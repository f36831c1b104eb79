#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

namespace mtl::binary_io {

// Little-endian fixed-width encoding for the on-disk formats.

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void write_values(std::ostream& os, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      const T le = to_little(v);
      os.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
  }
}

template <typename T>
bool read_values(std::istream& is, std::span<T> out) {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
  if (!is) return false;
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : out) v = to_little(v);
  }
  return true;
}

template <typename T>
void write_value(std::ostream& os, T value) {
  write_values<T>(os, std::span<const T>(&value, 1));
}

}  // namespace mtl::binary_io
