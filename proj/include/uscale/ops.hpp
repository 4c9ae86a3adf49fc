// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "uscale/numerics.hpp"
#include "uscale/tensor.hpp"

namespace uscale {

using TokenId = std::uint32_t;

// ---- primitives -----------------------------------------------------------
//
// Binary ops accept equal shapes, or one operand whose shape is a trailing
// suffix of the other's (a scalar is the empty suffix).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Exact scalar multiply, in both passes.
Tensor scale(const Tensor& x, double k);

/// x[..., k] @ w[k, m] -> [..., m].
Tensor matmul(const Tensor& x, const Tensor& w);
/// 2D transpose.
Tensor transpose(const Tensor& x);
/// [a, b, c, d] -> [a, c, b, d].
Tensor swap_axes12(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Rows of `table` [V, D] at `ids` -> [ids.size(), D]; backward scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Softmax over the last dimension.
Tensor softmax(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
/// mask[i] ? a[i] : b[i]; all three share one shape.
Tensor where(std::span<const std::uint8_t> mask, const Tensor& a, const Tensor& b);

// ---- directional scaling --------------------------------------------------

/// Forward k * x; gradient passes through unchanged.
Tensor scale_fwd(const Tensor& x, double k);
/// Forward x unchanged; gradient multiplied by k.
Tensor scale_bwd(const Tensor& x, double k);

// ---- casts ----------------------------------------------------------------

/// Quantizes the forward value; gradient passes straight through.
Tensor cast(const Tensor& x, const FloatFormat& fmt);
/// Identity forward; quantizes the gradient flowing back to x.
Tensor cast_grad(const Tensor& x, const FloatFormat& fmt);

// ---- fused kernels with exact gradients ------------------------------------

/// softmax(c * q k^T + mask) v over q, k, v of shape [B, H, S, D]. The
/// causal mask sets logits with key index > query index to -inf.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, double logit_scale,
                      bool causal);

/// x_in * x_gate * sigmoid(alpha * x_gate).
Tensor gated_silu(const Tensor& x_in, const Tensor& x_gate, double alpha);

/// x / sqrt(mean(x^2) + eps) over the last dimension.
Tensor rmsnorm(const Tensor& x, double eps);

/// Rotary embedding on interleaved pairs of the last dimension; positions
/// index dimension -2. Pair i rotates by pos * base^(-2i/D).
Tensor rope(const Tensor& x, std::span<const double> positions, double base = 10000.0);
/// Positions 0 .. S-1.
Tensor rope(const Tensor& x, double base = 10000.0);

/// Mean over rows of -log softmax(alpha * logits)[target] for logits [N, s].
Tensor softmax_xent(const Tensor& logits, std::span<const TokenId> targets, double alpha = 1.0);

/// clip(x, -1, 1).
Tensor hardtanh(const Tensor& x);

}  // namespace uscale
