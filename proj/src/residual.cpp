// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/residual.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "uscale/ops.hpp"

namespace uscale {

namespace {

void check_coefficients(const char* op, double a, double b) {
  if (!(a >= 0.0) || !(b >= 0.0) || std::fabs(a * a + b * b - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(op) + ": coefficients a=" + std::to_string(a) + ", b=" +
                                std::to_string(b) + " do not satisfy a^2 + b^2 = 1");
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

double relative_deviation(std::span<const double> got, std::span<const double> want) {
  double d = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) d = std::max(d, std::fabs(got[i] - want[i]));
  const double scale = max_abs(want);
  return scale > 0.0 ? d / scale : d;
}

}  // namespace

ResidualSchedule build_schedule(std::size_t depth, double alpha_res, double alpha_res_attn_ratio) {
  if (depth < 2 || depth % 2 != 0)
    throw std::invalid_argument("build_schedule: depth must be even and at least 2, got " + std::to_string(depth));
  if (!(alpha_res > 0.0) || !(alpha_res_attn_ratio > 0.0))
    throw std::invalid_argument("build_schedule: residual HPs must be positive");
  ResidualSchedule s;
  s.depth = depth;
  s.alpha_res = alpha_res;
  s.alpha_res_attn_ratio = alpha_res_attn_ratio;
  const double ratio_sq = alpha_res_attn_ratio * alpha_res_attn_ratio;
  const double f2 = 2.0 * alpha_res * alpha_res / (ratio_sq + 1.0);
  const double a2 = ratio_sq * f2;
  const double half = static_cast<double>(depth) / 2.0;
  for (std::size_t l = 1; l <= depth; ++l) {
    const double k = static_cast<double>((l - 1) / 2);
    ResidualBranch br;
    br.l = l;
    br.attention = l % 2 == 1;
    br.tau_sq = br.attention ? a2 / (half + k * a2 + k * f2) : f2 / (half + (k + 1.0) * a2 + k * f2);
    br.a = std::sqrt(br.tau_sq) / std::sqrt(br.tau_sq + 1.0);
    br.b = 1.0 / std::sqrt(br.tau_sq + 1.0);
    s.branches.push_back(br);
  }
  return s;
}

nlohmann::json schedule_to_json(const ResidualSchedule& s) {
  nlohmann::json j;
  j["depth"] = s.depth;
  j["alpha_res"] = s.alpha_res;
  j["alpha_res_attn_ratio"] = s.alpha_res_attn_ratio;
  j["branches"] = nlohmann::json::array();
  for (const auto& b : s.branches)
    j["branches"].push_back({{"l", b.l}, {"tau_sq", b.tau_sq}, {"a", b.a}, {"b", b.b},
                             {"kind", b.attention ? "attention" : "ffn"}});
  return j;
}

Tensor branch_input(const Tensor& stream, double a) { return scale_bwd(stream, a); }

Tensor residual_add(const Tensor& branch_out, const Tensor& skip, double a, double b) {
  check_coefficients("residual_add", a, b);
  if (branch_out.shape() != skip.shape())
    throw std::invalid_argument("residual_add: shape mismatch " + shape_str(branch_out.shape()) + " vs " +
                                shape_str(skip.shape()));
  // a = 0 is the pure-skip limit; scale_fwd needs a positive factor.
  if (a == 0.0) return scale(skip, b);
  return add(scale_fwd(branch_out, a), scale(skip, b));
}

Tensor residual_add_immediate(const Tensor& branch_out, const Tensor& skip, double a, double b) {
  check_coefficients("residual_add_immediate", a, b);
  if (branch_out.shape() != skip.shape())
    throw std::invalid_argument("residual_add_immediate: shape mismatch " + shape_str(branch_out.shape()) +
                                " vs " + shape_str(skip.shape()));
  return add(scale(branch_out, a), scale(skip, b));
}

LemmaCheckResult lemma_f1_check(std::span<const double> r, std::size_t depth, const std::vector<ProbeFn>& probes,
                                std::span<const double> x) {
  if (r.size() != depth + 1)
    throw std::invalid_argument("lemma_f1_check: need " + std::to_string(depth + 1) + " multipliers, got " +
                                std::to_string(r.size()));
  if (probes.size() != depth + 1)
    throw std::invalid_argument("lemma_f1_check: need " + std::to_string(depth + 1) + " probe functions, got " +
                                std::to_string(probes.size()));
  if (!(r[0] > 0.0)) throw std::invalid_argument("lemma_f1_check: r_0 must be positive");
  for (double v : r)
    if (!(v >= 0.0)) throw std::invalid_argument("lemma_f1_check: multipliers must be non-negative");

  std::vector<double> doubled(x.begin(), x.end());
  for (double& v : doubled) v *= 2.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    if (relative_deviation(probes[i](doubled), probes[i](x)) > 1e-9)
      throw std::invalid_argument("lemma_f1_check: probe " + std::to_string(i + 1) + " is not zero-homogeneous");
  }

  LemmaCheckResult out;
  std::vector<double> R(x.begin(), x.end()), Rh(x.begin(), x.end());
  for (double& v : R) v *= r[0];
  double sum_sq = r[0] * r[0];
  for (std::size_t l = 1; l <= depth; ++l) {
    const double tau_sq = r[l] * r[l] / sum_sq;
    const double a = std::sqrt(tau_sq / (tau_sq + 1.0)), b = 1.0 / std::sqrt(tau_sq + 1.0);
    const std::vector<double> f = probes[l - 1](R), fh = probes[l - 1](Rh);
    for (std::size_t i = 0; i < R.size(); ++i) {
      R[i] += r[l] * f[i];
      Rh[i] = a * fh[i] + b * Rh[i];
    }
    sum_sq += r[l] * r[l];
    std::vector<double> expected = R;
    for (double& v : expected) v /= std::sqrt(sum_sq);
    out.max_layer_deviation = std::max(out.max_layer_deviation, relative_deviation(Rh, expected));
  }
  out.final_deviation = relative_deviation(probes[depth](Rh), probes[depth](R));
  return out;
}

ProbeFn make_norm_linear_probe(std::size_t width, Rng& rng) {
  std::vector<double> w(width * width);
  for (double& v : w) v = rng.normal();
  return [w = std::move(w), width](std::span<const double> x) {
    if (x.size() % width != 0) throw std::invalid_argument("probe: input is not a multiple of the width");
    std::vector<double> out(x.size(), 0.0);
    const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t row = 0; row < x.size() / width; ++row) {
      const double* xr = x.data() + row * width;
      double ss = 0.0;
      for (std::size_t j = 0; j < width; ++j) ss += xr[j] * xr[j];
      const double inv = 1.0 / std::sqrt(ss / static_cast<double>(width));
      for (std::size_t j = 0; j < width; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < width; ++k) acc += xr[k] * inv * w[k * width + j];
        out[row * width + j] = acc * inv_sqrt_w;
      }
    }
    return out;
  };
}

LemmaCheckResult lemma_f1_trials(std::size_t max_depth, std::size_t trials, std::size_t width, std::uint64_t seed) {
  if (max_depth == 0 || trials == 0 || width == 0)
    throw std::invalid_argument("lemma_f1_trials: depth, trials and width must be positive");
  LemmaCheckResult worst;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    const std::size_t depth = 1 + rng.below(max_depth);
    std::vector<double> r(depth + 1), x(4 * width);
    for (double& v : r) v = 0.1 + 3.9 * rng.uniform();
    for (double& v : x) v = rng.normal();
    std::vector<ProbeFn> probes;
    for (std::size_t i = 0; i <= depth; ++i) probes.push_back(make_norm_linear_probe(width, rng));
    const LemmaCheckResult res = lemma_f1_check(r, depth, probes, x);
    worst.max_layer_deviation = std::max(worst.max_layer_deviation, res.max_layer_deviation);
    worst.final_deviation = std::max(worst.final_deviation, res.final_deviation);
  }
  return worst;
}

}  // namespace uscale
