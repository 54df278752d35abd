#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace matz {

/// IEEE 754 binary16 conversion. Round-to-nearest-even, subnormals
/// preserved, values beyond the half range clamped to +-65504 (the caller
/// decides whether clamping deserves a warning).

inline constexpr double kHalfMax = 65504.0;

namespace detail {

// Round q >= 0 to the nearest integer, ties to even. q is exact in double
// for every value this header feeds it, so the comparison against 0.5 is
// itself exact.
inline std::uint32_t round_nearest_even(double q) {
    const double f = std::floor(q);
    const double r = q - f;
    auto fi = static_cast<std::uint32_t>(f);
    if (r > 0.5) return fi + 1;
    if (r < 0.5) return fi;
    return (fi % 2 == 0) ? fi : fi + 1;
}

}  // namespace detail

struct HalfEncodeResult {
    std::uint16_t bits = 0;
    bool clamped = false;
};

inline HalfEncodeResult half_encode(double x) {
    if (std::isnan(x)) throw std::invalid_argument("half_encode: NaN input");
    HalfEncodeResult res;
    const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
    const double ax = std::abs(x);

    if (ax == 0.0) {
        res.bits = sign;
        return res;
    }

    int e2 = 0;
    const double m01 = std::frexp(ax, &e2);  // ax = m01 * 2^e2, m01 in [0.5, 1)
    int exp_field = e2 - 1 + 15;

    if (exp_field >= 1) {
        // Normal range: mantissa in [1024, 2048).
        std::uint32_t mant = detail::round_nearest_even(m01 * 2048.0);
        if (mant == 2048) {  // rounded up into the next binade
            mant = 1024;
            ++exp_field;
        }
        if (exp_field >= 31) {
            res.bits = sign | 0x7bff;  // +-65504
            res.clamped = true;
            return res;
        }
        res.bits = static_cast<std::uint16_t>(
            sign | (static_cast<std::uint16_t>(exp_field) << 10) |
            static_cast<std::uint16_t>(mant - 1024));
        return res;
    }

    // Subnormal range: value = mant * 2^-24.
    std::uint32_t mant = detail::round_nearest_even(ax * 16777216.0);
    if (mant >= 1024) {  // rounded up to the smallest normal
        res.bits = sign | 0x0400;
        return res;
    }
    res.bits = static_cast<std::uint16_t>(sign | mant);
    return res;
}

inline double half_decode(std::uint16_t h) {
    const int sign = (h & 0x8000) ? -1 : 1;
    const int exp_field = (h >> 10) & 0x1f;
    const int mant = h & 0x3ff;
    if (exp_field == 0x1f) {
        if (mant != 0) return std::numeric_limits<double>::quiet_NaN();
        return sign * std::numeric_limits<double>::infinity();
    }
    if (exp_field == 0) {
        return sign * std::ldexp(static_cast<double>(mant), -24);
    }
    return sign * std::ldexp(1.0 + mant / 1024.0, exp_field - 15);
}

/// Quantize-dequantize through binary16.
inline double half_round_trip(double x) { return half_decode(half_encode(x).bits); }

}  // namespace matz
