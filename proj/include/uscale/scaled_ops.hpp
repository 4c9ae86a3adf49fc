// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "uscale/numerics.hpp"
#include "uscale/ops.hpp"
#include "uscale/tensor.hpp"

namespace uscale {

/// How backward scales relate to the forward scale for non-cut-edge inputs.
enum class Constraint {
  to_output_scale,  ///< every constrained backward factor takes the forward value
  none,             ///< factors kept independent
};

struct OpScales {
  double alpha_fwd = 1.0;
  std::vector<double> betas_bwd;
};

/// Applies `c` to the constrained backward factors. Cut-edge factors (weight
/// gradients, the logits edge) are not passed here and stay as computed.
OpScales apply_constraint(Constraint c, double alpha, std::vector<double> betas);

/// Optional casts around a matmul; unset members are left in high precision.
struct MatmulCasts {
  std::optional<FloatFormat> input;
  std::optional<FloatFormat> weight;
  std::optional<FloatFormat> grad_output;

  bool any() const { return input || weight || grad_output; }
};

// ---- scale factors --------------------------------------------------------

struct MatmulScales {
  double alpha = 1.0;     // output
  double beta_x = 1.0;    // grad to x (after the constraint)
  double beta_w = 1.0;    // grad to w, cut edge
};

MatmulScales matmul_scales(std::size_t fan_in, std::size_t fan_out, std::size_t batch,
                           Constraint c = Constraint::to_output_scale);

struct LinearOutputScales {
  double fwd = 1.0;     // 1/fan_in
  double bwd_x = 1.0;   // 1/sqrt(fan_in)
  double beta_w = 1.0;  // 1/sqrt(batch)
};

LinearOutputScales linear_output_scales(std::size_t fan_in, std::size_t batch);

/// Output and gradient factor of unit-scaled attention for sequence length s.
double attention_scale(double alpha_attn, std::size_t d_head, std::size_t seq_len);

/// Output and gradient factor of the unit-scaled gated SiLU.
double gated_silu_scale(double alpha_ffn_act);

/// Softmax-Jacobian compensation on the logits gradient, s / sqrt(s - 1)
/// for s classes.
double xent_softmax_beta(std::size_t classes);

/// Batch-mean compensation on the logits gradient: the row count.
double xent_batch_beta(std::size_t rows);

struct HardtanhScales {
  double y_scale;     // 1 / sqrt(1 - sqrt(2 / (pi e)))
  double grad_scale;  // 1 / sqrt(erf(1 / sqrt(2)))
};

HardtanhScales hardtanh_scales();

// ---- ops ------------------------------------------------------------------

/// (x @ w) / sqrt(fan_in) with grad-x scaled by beta_x and grad-w by
/// 1/sqrt(batch), batch being every dimension of x except the last.
Tensor u_matmul(const Tensor& x, const Tensor& w, Constraint c = Constraint::to_output_scale,
                const MatmulCasts& casts = {});

/// Row gather with no scaling in either pass.
Tensor u_embedding_lookup(std::span<const TokenId> ids, const Tensor& table);

/// Readout: (x @ w) / fan_in forward, grad-x scaled by 1/sqrt(fan_in).
Tensor u_linear_output(const Tensor& x, const Tensor& w, const MatmulCasts& casts = {});

/// Unit-scaled attention over [B, H, S, D] inputs. Logits are
/// alpha_attn / d_head * q k^T.
Tensor u_attention(const Tensor& q, const Tensor& k, const Tensor& v, double alpha_attn,
                   bool causal = true);

Tensor u_gated_silu(const Tensor& x_in, const Tensor& x_gate, double alpha_ffn_act);

/// Batch-mean cross entropy of softmax(alpha * logits) over [N, s] logits.
Tensor u_softmax_xent(const Tensor& logits, std::span<const TokenId> targets,
                      double alpha_loss_softmax = 1.0);

/// Non-trainable RMSNorm; no scaling.
Tensor u_rmsnorm(const Tensor& x, double eps = 1e-6);

Tensor u_hardtanh(const Tensor& x, Constraint c = Constraint::to_output_scale);

/// u_matmul whose input is divided by its standard deviation before the
/// input cast and multiplied back after the matmul. Neither operation
/// appears in the backward pass.
Tensor dynamic_rescale_matmul(const Tensor& x, const Tensor& w, const MatmulCasts& casts = {});

}  // namespace uscale
