// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "uscale/tensor.hpp"

namespace uscale {

/// Coefficients of residual branch l (1-based). Odd l is attention, even l
/// is the FFN.
struct ResidualBranch {
  std::size_t l = 0;
  double tau_sq = 0.0;
  double a = 0.0;  // branch coefficient
  double b = 1.0;  // skip coefficient
  bool attention = true;
};

struct ResidualSchedule {
  std::size_t depth = 0;  // L, the number of residual branches
  double alpha_res = 1.0;
  double alpha_res_attn_ratio = 1.0;
  std::vector<ResidualBranch> branches;

  const ResidualBranch& at(std::size_t l) const { return branches.at(l - 1); }
};

/// Schedule for L branches (L even). With
///   f2 = 2 alpha_res^2 / (ratio^2 + 1),  a2 = ratio^2 f2,  k = floor((l-1)/2),
/// odd l gets tau^2 = a2 / (L/2 + k a2 + k f2) and even l gets
/// tau^2 = f2 / (L/2 + (k+1) a2 + k f2); then a = tau / sqrt(tau^2 + 1) and
/// b = 1 / sqrt(tau^2 + 1).
ResidualSchedule build_schedule(std::size_t depth, double alpha_res, double alpha_res_attn_ratio);

/// Per-branch dump: l, tau_sq, a, b, kind.
nlohmann::json schedule_to_json(const ResidualSchedule& s);

/// Reads the residual stream into a branch. Carries the branch coefficient
/// `a` in the backward pass only, so the branch interior stays unit-scaled.
Tensor branch_input(const Tensor& stream, double a);

/// a * branch_out + b * skip, where the factor a is forward-only (its
/// backward counterpart is applied by branch_input).
Tensor residual_add(const Tensor& branch_out, const Tensor& skip, double a, double b);

/// a * branch_out + b * skip with exact gradients; reference for the delayed
/// form.
Tensor residual_add_immediate(const Tensor& branch_out, const Tensor& skip, double a, double b);

/// A branch function on a flat vector.
using ProbeFn = std::function<std::vector<double>(std::span<const double>)>;

struct LemmaCheckResult {
  double max_layer_deviation = 0.0;  // max over l of |R^_l - R_l / sqrt(sum r_i^2)|, relative
  double final_deviation = 0.0;      // |R^_{L+1} - R_{L+1}|, relative
};

/// Builds the standard residual network
///   R_0 = r_0 x,  R_l = R_{l-1} + r_l f_l(R_{l-1}),  R_{L+1} = f_{L+1}(R_L)
/// and the interpolated network with tau_l^2 = r_l^2 / sum_{i<l} r_i^2, and
/// compares them. `probes` holds f_1 .. f_{L+1}; each must be
/// zero-homogeneous, which is checked by doubling its input.
LemmaCheckResult lemma_f1_check(std::span<const double> r, std::size_t depth,
                                const std::vector<ProbeFn>& probes, std::span<const double> x);

/// f(x) = W rmsnorm(x) / sqrt(width) with a Gaussian W; zero-homogeneous.
ProbeFn make_norm_linear_probe(std::size_t width, Rng& rng);

/// Worst case of lemma_f1_check over `trials` random networks: depth drawn
/// from [1, max_depth], r_l uniform in [0.1, 4], norm-linear probes of
/// `width` on 4 rows of Gaussian input.
LemmaCheckResult lemma_f1_trials(std::size_t max_depth, std::size_t trials, std::size_t width, std::uint64_t seed);

}  // namespace uscale
