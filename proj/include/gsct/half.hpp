#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace gsct {

// IEEE 754 binary16 codec. Encoding rounds to nearest-even directly from
// double; values past the largest finite half (65504) saturate and are
// reported through the flag. Decoding is exact.
inline std::uint16_t encode_half(double value, bool* saturated = nullptr) {
  if (std::isnan(value)) return 0x7e00;
  const std::uint16_t sign = std::signbit(value) ? 0x8000 : 0x0000;
  const double mag = std::abs(value);
  if (mag == 0.0) return sign;
  // 65520 is the midpoint between the max finite half and the first value
  // that would round to infinity.
  if (!(mag < 65520.0)) {
    if (saturated) *saturated = true;
    return sign | 0x7bff;  // +-65504
  }
  if (mag < 0x1.0p-14) {  // subnormal range, quantum 2^-24
    const double n = std::nearbyint(mag * 0x1.0p24);
    if (n >= 1024.0) return sign | 0x0400;  // rounded up into the normal range
    return sign | static_cast<std::uint16_t>(n);
  }
  int exp2 = 0;
  std::frexp(mag, &exp2);  // mag = m * 2^exp2, m in [0.5, 1)
  int e = exp2 - 1;        // mag in [2^e, 2^(e+1))
  double n = std::nearbyint(std::ldexp(mag, 10 - e));  // in [1024, 2048]
  if (n >= 2048.0) {
    n = 1024.0;
    ++e;
  }
  return sign | static_cast<std::uint16_t>(((e + 15) << 10) |
                                           (static_cast<int>(n) - 1024));
}

inline double decode_half(std::uint16_t bits) {
  const double sign = (bits & 0x8000) ? -1.0 : 1.0;
  const int exp_field = (bits >> 10) & 0x1f;
  const int mant = bits & 0x3ff;
  if (exp_field == 0) return sign * std::ldexp(static_cast<double>(mant), -24);
  if (exp_field == 31) {
    if (mant != 0) return std::nan("");
    return sign * std::numeric_limits<double>::infinity();
  }
  return sign * std::ldexp(static_cast<double>(1024 + mant), exp_field - 25);
}

}  // namespace gsct
