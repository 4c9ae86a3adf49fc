// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/numerics.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uscale {

namespace {

FloatFormat preset(std::string name, int e, int m, SpecialValues special) {
  FloatFormat f;
  f.name = std::move(name);
  f.exponent_bits = e;
  f.mantissa_bits = m;
  f.special_values = special;
  const int bias = (1 << (e - 1)) - 1;
  const int emin = 1 - bias;
  // Largest exponent field usable by finite values. IEEE reserves the
  // all-ones exponent; E4M3 only reserves the all-ones mantissa within it.
  if (special == SpecialValues::inf_and_nan) {
    const int emax = (1 << e) - 2 - bias;
    f.max_finite = std::ldexp(2.0 - std::ldexp(1.0, -m), emax);
  } else {
    const int emax = (1 << e) - 1 - bias;
    f.max_finite = std::ldexp(2.0 - std::ldexp(1.0, 1 - m), emax);
  }
  f.min_normal = std::ldexp(1.0, emin);
  f.min_subnormal = std::ldexp(1.0, emin - m);
  return f;
}

// 2^k as a double, exact for the exponent range used here.
double pow2(int k) {
  return std::bit_cast<double>(static_cast<std::uint64_t>(k + 1023) << 52);
}

}  // namespace

int FloatFormat::min_exponent() const { return 2 - (1 << (exponent_bits - 1)); }

double FloatFormat::overflow_value() const {
  return special_values == SpecialValues::inf_and_nan
             ? std::numeric_limits<double>::infinity()
             : std::numeric_limits<double>::quiet_NaN();
}

FloatFormat make_format(std::string_view name) {
  if (name == "e4m3") return preset("e4m3", 4, 3, SpecialValues::single_nan_only);
  if (name == "e5m2") return preset("e5m2", 5, 2, SpecialValues::inf_and_nan);
  if (name == "bf16") return preset("bf16", 8, 7, SpecialValues::inf_and_nan);
  if (name == "fp16") return preset("fp16", 5, 10, SpecialValues::inf_and_nan);
  if (name == "fp32") return preset("fp32", 8, 23, SpecialValues::inf_and_nan);
  throw std::invalid_argument("unknown float format '" + std::string(name) +
                              "' (expected e4m3, e5m2, bf16, fp16 or fp32)");
}

FloatFormat with_saturation(FloatFormat fmt, bool saturating) {
  fmt.saturating = saturating;
  return fmt;
}

double quantize(double x, const FloatFormat& fmt) {
  if (std::isnan(x) || x == 0.0) return x;
  const double mag = std::fabs(x);
  if (std::isinf(x)) {
    if (fmt.saturating) return std::copysign(fmt.max_finite, x);
    return fmt.special_values == SpecialValues::inf_and_nan ? x : fmt.overflow_value();
  }
  const auto bits = std::bit_cast<std::uint64_t>(mag);
  int exponent = static_cast<int>((bits >> 52) & 0x7ff) - 1023;
  if (exponent < fmt.min_exponent()) exponent = fmt.min_exponent();
  // Step between neighbouring representable values in this binade.
  const int step = exponent - fmt.mantissa_bits;
  // nearbyint follows the default FE_TONEAREST mode: ties go to even.
  const double rounded = std::nearbyint(mag * pow2(-step)) * pow2(step);
  if (rounded > fmt.max_finite) {
    if (fmt.saturating) return std::copysign(fmt.max_finite, x);
    const double ov = fmt.overflow_value();
    return std::isnan(ov) ? ov : std::copysign(ov, x);
  }
  return std::copysign(rounded, x);
}

void quantize_inplace(std::span<double> xs, const FloatFormat& fmt) {
  for (double& x : xs) x = quantize(x, fmt);
}

std::vector<double> quantize(std::span<const double> xs, const FloatFormat& fmt) {
  std::vector<double> out(xs.begin(), xs.end());
  quantize_inplace(out, fmt);
  return out;
}

ScaleStats stats(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("stats: empty input");
  long double sum = 0.0L;
  double abs_max = 0.0;
  for (double x : xs) {
    sum += x;
    abs_max = std::max(abs_max, std::fabs(x));
  }
  const long double n = static_cast<long double>(xs.size());
  const long double mean = sum / n;
  long double sq = 0.0L;
  for (double x : xs) {
    const long double d = x - mean;
    sq += d * d;
  }
  ScaleStats s;
  s.count = xs.size();
  s.mean = static_cast<double>(mean);
  s.std = static_cast<double>(std::sqrt(sq / n));
  s.rms = static_cast<double>(std::sqrt(sq / n + mean * mean));
  s.abs_max = abs_max;
  return s;
}

double log_interpolate(double alpha, double b_upper, double b_lower) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("log_interpolate: alpha must lie in [0, 1]");
  if (!(b_upper > 0.0) || !(b_lower > 0.0))
    throw std::invalid_argument("log_interpolate: bounds must be positive");
  return std::exp(alpha * std::log(b_upper) + (1.0 - alpha) * std::log(b_lower));
}

QuantizeReport quantize_report(std::span<const double> xs, const FloatFormat& fmt) {
  if (xs.empty()) throw std::invalid_argument("quantize_report: empty input");
  QuantizeReport r;
  r.format = fmt.name;
  r.input_count = xs.size();
  std::size_t under = 0, over = 0;
  long double sq_before = 0.0L, sq_after = 0.0L;
  for (double x : xs) {
    const double q = quantize(x, fmt);
    if (x != 0.0 && q == 0.0) ++under;
    if (std::fabs(x) > fmt.max_finite) ++over;
    sq_before += static_cast<long double>(x) * x;
    sq_after += static_cast<long double>(q) * q;
  }
  const double n = static_cast<double>(xs.size());
  r.underflow_frac = static_cast<double>(under) / n;
  r.overflow_frac = static_cast<double>(over) / n;
  r.rms_before = static_cast<double>(std::sqrt(sq_before / n));
  r.rms_after = static_cast<double>(std::sqrt(sq_after / n));
  return r;
}

std::string quantize_report_header() {
  return "format,input_count,underflow_frac,overflow_frac,rms_before,rms_after";
}

std::string to_csv_row(const QuantizeReport& r) {
  return r.format + "," + std::to_string(r.input_count) + "," + format_double(r.underflow_frac) +
         "," + format_double(r.overflow_frac) + "," + format_double(r.rms_before) + "," +
         format_double(r.rms_after);
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, end);
}

}  // namespace uscale
