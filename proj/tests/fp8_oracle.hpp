// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

// Reference decoder and nearest-value search for 8-bit float formats. Built
// from the bit layout alone so it shares no code with quantize().

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "uscale/numerics.hpp"

namespace uscale::test {

/// Value of every code point 0..255 of an 8-bit format.
inline std::vector<double> decode_all(const FloatFormat& f) {
  const int e_bits = f.exponent_bits, m_bits = f.mantissa_bits;
  const int bias = (1 << (e_bits - 1)) - 1;
  const int e_all = (1 << e_bits) - 1, m_all = (1 << m_bits) - 1;
  std::vector<double> out(256);
  for (int code = 0; code < 256; ++code) {
    const int sign = code >> 7;
    const int e = (code >> m_bits) & e_all;
    const int m = code & m_all;
    double v;
    if (f.special_values == SpecialValues::inf_and_nan && e == e_all) {
      v = m == 0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
    } else if (f.special_values == SpecialValues::single_nan_only && e == e_all && m == m_all) {
      v = std::numeric_limits<double>::quiet_NaN();
    } else if (e == 0) {
      v = std::ldexp(m, 1 - bias - m_bits);
    } else {
      v = std::ldexp(1.0 + std::ldexp(m, -m_bits), e - bias);
    }
    out[static_cast<std::size_t>(code)] = sign ? -v : v;
  }
  return out;
}

/// Nearest finite code point with ties to the even code; saturates.
class NearestOracle {
 public:
  explicit NearestOracle(const FloatFormat& f) {
    const auto all = decode_all(f);
    for (int code = 0; code < 128; ++code)
      if (std::isfinite(all[code])) entries_.push_back({all[code], code});
    std::sort(entries_.begin(), entries_.end(), [](auto& a, auto& b) { return a.value < b.value; });
    for (auto& e : entries_) values_.push_back(e.value);
  }

  double operator()(double x) const {
    const double mag = std::fabs(x);
    const Entry* best = &entries_.front();
    for (const Entry& e : entries_) {
      const double d = std::fabs(mag - e.value), db = std::fabs(mag - best->value);
      if (d < db || (d == db && (e.code & 1) == 0 && (best->code & 1) == 1)) best = &e;
    }
    return std::copysign(best->value, x);
  }

  const std::vector<double>& values() const { return values_; }

 private:
  struct Entry {
    double value;
    int code;
  };
  std::vector<Entry> entries_;
  std::vector<double> values_;
};

}  // namespace uscale::test
