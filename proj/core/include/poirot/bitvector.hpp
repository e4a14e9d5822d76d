#pragma once

#include <bit>
#include <compare>
#include <cstdint>
#include <ostream>
#include <string>

#include "poirot/error.hpp"

namespace poirot {

inline constexpr unsigned kMaxWidth = 64;

/// All-ones mask for a width in 1..64.
constexpr std::uint64_t width_mask(unsigned width) noexcept {
  return width >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << width) - 1;
}

/// Fixed-width unsigned value; the value is always reduced modulo 2^width.
class BitVector {
 public:
  BitVector(unsigned width, std::uint64_t value) : width_(checked(width)), value_(value & width_mask(width)) {}

  /// Two's-complement encoding of a signed integer.
  static BitVector from_signed(unsigned width, std::int64_t value) {
    return BitVector(width, static_cast<std::uint64_t>(value));
  }

  unsigned width() const noexcept { return width_; }
  std::uint64_t value() const noexcept { return value_; }

  std::int64_t signed_value() const noexcept {
    if (width_ == 64) return static_cast<std::int64_t>(value_);
    const std::uint64_t sign = std::uint64_t{1} << (width_ - 1);
    return static_cast<std::int64_t>((value_ ^ sign)) - static_cast<std::int64_t>(sign);
  }

  bool msb() const noexcept { return (value_ >> (width_ - 1)) & 1U; }

  friend bool operator==(const BitVector&, const BitVector&) = default;
  friend auto operator<=>(const BitVector&, const BitVector&) = default;

  /// "0x5a[8]" style rendering.
  std::string to_string() const;

 private:
  static unsigned checked(unsigned width) {
    if (width == 0 || width > kMaxWidth) {
      throw TypeError("bitvector width " + std::to_string(width) + " outside 1..64");
    }
    return width;
  }

  unsigned width_;
  std::uint64_t value_;
};

std::ostream& operator<<(std::ostream& os, const BitVector& v);

/// Hamming weight.
inline unsigned popcount(const BitVector& v) noexcept { return static_cast<unsigned>(std::popcount(v.value())); }

/// ω(a xor b). Throws TypeError on unequal widths.
unsigned hamming_distance(const BitVector& a, const BitVector& b);

/// |ω(a) − ω(b)|. Throws TypeError on unequal widths.
unsigned diff_hw(const BitVector& a, const BitVector& b);

}  // namespace poirot
