// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uscale/tensor.hpp"

namespace uscale {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Independent decay: applied as w -= weight_decay * w, not scaled by lr.
  double weight_decay = 0.0;
};

/// One AdamW update of a single tensor, in place. `t` is the 1-based step.
///   w <- w - lr * mhat / (sqrt(vhat) + eps) - weight_decay * w
void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, const AdamConfig& cfg);

/// AdamW with per-parameter learning rates. Moments are created lazily on the
/// first step and must keep the same parameter list afterwards.
class AdamW {
 public:
  explicit AdamW(AdamConfig cfg);

  /// Updates every tensor from its accumulated gradient (missing gradient
  /// counts as zero). `lrs[i]` is the LR of params[i]; `decay[i]` selects
  /// whether weight decay applies (empty means all).
  void step(std::span<Tensor> params, std::span<const double> lrs, std::span<const bool> decay = {});

  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace uscale
