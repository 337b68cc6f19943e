#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "dgm/vec3.hpp"

namespace dgm {

using Bytes = std::vector<std::byte>;

namespace detail {

template <typename U>
constexpr U byteswap_unsigned(U v) {
  U r = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    r = static_cast<U>((r << 8) | (v & 0xff));
    v = static_cast<U>(v >> 8);
  }
  return r;
}

template <typename T>
using UnsignedOf = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                      std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;

}  // namespace detail

/// Appends fixed-width numbers in little-endian order.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    using U = detail::UnsignedOf<T>;
    static_assert(sizeof(T) == sizeof(U));
    U bits = std::bit_cast<U>(value);
    if constexpr (std::endian::native == std::endian::big) bits = detail::byteswap_unsigned(bits);
    const auto old = buf_.size();
    buf_.resize(old + sizeof(U));
    std::memcpy(buf_.data() + old, &bits, sizeof(U));
  }

  void put(const Vec3& v) {
    put(v.x);
    put(v.y);
    put(v.z);
  }

  void put_doubles(std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto old = buf_.size();
      buf_.resize(old + values.size_bytes());
      std::memcpy(buf_.data() + old, values.data(), values.size_bytes());
    } else {
      for (double v : values) put(v);
    }
  }

  std::size_t size() const { return buf_.size(); }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Reads what ByteWriter wrote; throws std::out_of_range on truncated input.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    using U = detail::UnsignedOf<T>;
    require(sizeof(U));
    U bits;
    std::memcpy(&bits, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    if constexpr (std::endian::native == std::endian::big) bits = detail::byteswap_unsigned(bits);
    return std::bit_cast<T>(bits);
  }

  Vec3 get_vec3() {
    Vec3 v;
    v.x = get<double>();
    v.y = get<double>();
    v.z = get<double>();
    return v;
  }

  void get_doubles(std::span<double> out) {
    if constexpr (std::endian::native == std::endian::little) {
      require(out.size_bytes());
      std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      for (double& v : out) v = get<double>();
    }
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (pos_ + n > data_.size())
      throw std::out_of_range("byte stream truncated at offset " + std::to_string(pos_));
  }

  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
};

}  // namespace dgm
