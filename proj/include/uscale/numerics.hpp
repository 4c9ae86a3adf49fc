// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uscale {

/// How a format encodes values outside its finite range.
enum class SpecialValues {
  inf_and_nan,      ///< IEEE-style: overflow produces +-inf.
  single_nan_only,  ///< No infinities (E4M3); overflow produces NaN.
};

/// An emulated binary floating-point format.
///
/// Values are simulated in 64-bit: quantize() returns the double nearest to
/// its argument among the values the format can represent.
struct FloatFormat {
  std::string name;
  int exponent_bits = 0;
  int mantissa_bits = 0;
  double max_finite = 0.0;
  double min_normal = 0.0;
  double min_subnormal = 0.0;
  bool saturating = true;
  SpecialValues special_values = SpecialValues::inf_and_nan;

  /// Smallest unbiased exponent of a normal number.
  int min_exponent() const;
  /// Value produced on overflow in non-saturating mode.
  double overflow_value() const;
  /// True when the format has fewer than 16 bits and can be enumerated.
  bool enumerable() const { return exponent_bits + mantissa_bits + 1 <= 16; }
};

/// Preset lookup: e4m3, e5m2, bf16, fp16, fp32. Throws std::invalid_argument
/// on any other name.
FloatFormat make_format(std::string_view name);

/// Copy of `fmt` with saturation switched.
FloatFormat with_saturation(FloatFormat fmt, bool saturating);

/// Round-to-nearest-even cast of one value into `fmt`.
double quantize(double x, const FloatFormat& fmt);

void quantize_inplace(std::span<double> xs, const FloatFormat& fmt);
std::vector<double> quantize(std::span<const double> xs, const FloatFormat& fmt);

/// Tensor-scale statistics, accumulated in extended precision.
struct ScaleStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double rms = 0.0;
  double abs_max = 0.0;
  std::size_t count = 0;
};

ScaleStats stats(std::span<const double> xs);

/// Geometric interpolation exp(alpha ln upper + (1 - alpha) ln lower).
double log_interpolate(double alpha, double b_upper, double b_lower);

/// One row of a quantization report.
struct QuantizeReport {
  std::string format;
  std::size_t input_count = 0;
  double underflow_frac = 0.0;  // non-zero inputs flushed to zero
  double overflow_frac = 0.0;   // inputs beyond max_finite
  double rms_before = 0.0;
  double rms_after = 0.0;
};

QuantizeReport quantize_report(std::span<const double> xs, const FloatFormat& fmt);

/// CSV header matching QuantizeReport's column order.
std::string quantize_report_header();
std::string to_csv_row(const QuantizeReport& r);

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double x);

}  // namespace uscale
