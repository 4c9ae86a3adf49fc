// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/scaled_ops.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "uscale/log.hpp"

namespace uscale {

namespace {

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

Tensor maybe_cast(const Tensor& x, const std::optional<FloatFormat>& fmt) {
  return fmt ? cast(x, *fmt) : x;
}

Tensor maybe_cast_grad(const Tensor& x, const std::optional<FloatFormat>& fmt) {
  return fmt ? cast_grad(x, *fmt) : x;
}

// Forward multiply by k that is invisible to the backward pass in every
// engine mode.
Tensor value_rescale(const Tensor& x, double k) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x.data()[i];
  Tensor t = make_result(x.shape(), std::move(out), "dynamic_rescale", {x}, [](Node& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
  t.node().attrs = {{"k", k}};
  return t;
}

void require_positive(const char* op, const char* name, double v) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw std::invalid_argument(std::string(op) + ": " + name + " must be positive, got " + std::to_string(v));
}

}  // namespace

OpScales apply_constraint(Constraint c, double alpha, std::vector<double> betas) {
  require_positive("apply_constraint", "alpha", alpha);
  for (double b : betas) require_positive("apply_constraint", "beta", b);
  if (c == Constraint::to_output_scale)
    for (double& b : betas) b = alpha;
  return {alpha, std::move(betas)};
}

MatmulScales matmul_scales(std::size_t fan_in, std::size_t fan_out, std::size_t batch, Constraint c) {
  if (fan_in == 0 || fan_out == 0 || batch == 0)
    throw std::invalid_argument("matmul_scales: dimensions must be positive");
  const OpScales s = apply_constraint(c, inv_sqrt(fan_in), {inv_sqrt(fan_out)});
  return {s.alpha_fwd, s.betas_bwd[0], inv_sqrt(batch)};
}

LinearOutputScales linear_output_scales(std::size_t fan_in, std::size_t batch) {
  if (fan_in == 0 || batch == 0) throw std::invalid_argument("linear_output_scales: dimensions must be positive");
  return {1.0 / static_cast<double>(fan_in), inv_sqrt(fan_in), inv_sqrt(batch)};
}

double attention_scale(double alpha_attn, std::size_t d_head, std::size_t seq_len) {
  require_positive("attention_scale", "alpha_attn", alpha_attn);
  if (d_head == 0) throw std::invalid_argument("attention_scale: d_head must be positive");
  if (seq_len < 2) throw std::invalid_argument("attention_scale: sequence length must be at least 2");
  const double s = static_cast<double>(seq_len);
  const double w = 1.0 / (1.0 + 4.0 * static_cast<double>(d_head) / (alpha_attn * alpha_attn));
  return 1.0 / log_interpolate(w, 1.0, std::sqrt(std::log(s) / s));
}

double gated_silu_scale(double alpha_ffn_act) {
  require_positive("gated_silu_scale", "alpha_ffn_act", alpha_ffn_act);
  const double w = 1.0 / (1.0 + 1.0 / (alpha_ffn_act * alpha_ffn_act));
  return 1.0 / log_interpolate(w, 1.0 / std::numbers::sqrt2, 0.5);
}

double xent_softmax_beta(std::size_t classes) {
  if (classes < 2) throw std::invalid_argument("xent_softmax_beta: need at least 2 classes");
  const double s = static_cast<double>(classes);
  return s / std::sqrt(s - 1.0);
}

double xent_batch_beta(std::size_t rows) {
  if (rows == 0) throw std::invalid_argument("xent_batch_beta: empty batch");
  return static_cast<double>(rows);
}

HardtanhScales hardtanh_scales() {
  const double y = 1.0 / std::sqrt(1.0 - std::sqrt(2.0 / (std::numbers::pi * std::numbers::e)));
  const double g = 1.0 / std::sqrt(std::erf(1.0 / std::numbers::sqrt2));
  return {y, g};
}

Tensor u_matmul(const Tensor& x, const Tensor& w, Constraint c, const MatmulCasts& casts) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0))
    throw std::invalid_argument("u_matmul: shapes " + shape_str(x.shape()) + " and " + shape_str(w.shape()) +
                                " are incompatible");
  const std::size_t fan_in = w.dim(0), fan_out = w.dim(1), batch = x.numel() / fan_in;
  const MatmulScales s = matmul_scales(fan_in, fan_out, batch, c);
  // Casts follow the static scaling so they see unit-scaled tensors.
  const Tensor xs = maybe_cast(scale_bwd(x, s.beta_x), casts.input);
  const Tensor ws = maybe_cast(scale_bwd(w, s.beta_w), casts.weight);
  const Tensor y = maybe_cast_grad(matmul(xs, ws), casts.grad_output);
  return scale_fwd(y, s.alpha);
}

Tensor u_embedding_lookup(std::span<const TokenId> ids, const Tensor& table) {
  return gather_rows(table, ids);
}

Tensor u_linear_output(const Tensor& x, const Tensor& w, const MatmulCasts& casts) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0))
    throw std::invalid_argument("u_linear_output: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(w.shape()) + " are incompatible");
  const std::size_t fan_in = w.dim(0), batch = x.numel() / fan_in;
  const LinearOutputScales s = linear_output_scales(fan_in, batch);
  const Tensor xs = maybe_cast(scale_bwd(x, s.bwd_x), casts.input);
  const Tensor ws = maybe_cast(scale_bwd(w, s.beta_w), casts.weight);
  const Tensor y = maybe_cast_grad(matmul(xs, ws), casts.grad_output);
  return scale_fwd(y, s.fwd);
}

Tensor u_attention(const Tensor& q, const Tensor& k, const Tensor& v, double alpha_attn, bool causal) {
  if (q.rank() != 4) throw std::invalid_argument("u_attention: expected [B, H, S, D], got " + shape_str(q.shape()));
  const std::size_t d_head = q.dim(3), seq = q.dim(2);
  const double f = attention_scale(alpha_attn, d_head, seq);
  const Tensor o = attention_core(scale_bwd(q, f), scale_bwd(k, f), scale_bwd(v, f),
                                  alpha_attn / static_cast<double>(d_head), causal);
  return scale_fwd(o, f);
}

Tensor u_gated_silu(const Tensor& x_in, const Tensor& x_gate, double alpha_ffn_act) {
  const double f = gated_silu_scale(alpha_ffn_act);
  return scale_fwd(gated_silu(scale_bwd(x_in, f), scale_bwd(x_gate, f), alpha_ffn_act), f);
}

Tensor u_softmax_xent(const Tensor& logits, std::span<const TokenId> targets, double alpha_loss_softmax) {
  require_positive("u_softmax_xent", "alpha_loss_softmax", alpha_loss_softmax);
  if (logits.rank() != 2)
    throw std::invalid_argument("u_softmax_xent: expected [N, s], got " + shape_str(logits.shape()));
  // Two separate backward factors: the softmax Jacobian and the batch mean.
  const Tensor z = scale_bwd(scale_bwd(logits, xent_softmax_beta(logits.dim(1))), xent_batch_beta(logits.dim(0)));
  return softmax_xent(z, targets, alpha_loss_softmax);
}

Tensor u_rmsnorm(const Tensor& x, double eps) { return rmsnorm(x, eps); }

Tensor u_hardtanh(const Tensor& x, Constraint c) {
  const HardtanhScales h = hardtanh_scales();
  const OpScales s = apply_constraint(c, h.y_scale, {h.grad_scale});
  return scale_fwd(hardtanh(scale_bwd(x, s.betas_bwd[0])), s.alpha_fwd);
}

Tensor dynamic_rescale_matmul(const Tensor& x, const Tensor& w, const MatmulCasts& casts) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0))
    throw std::invalid_argument("dynamic_rescale_matmul: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(w.shape()) + " are incompatible");
  const double sigma = stats(x.data()).std;
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    log_warning("dynamic_rescale_matmul: input has zero variance, casting without rescale");
    return u_matmul(x, w, Constraint::to_output_scale, casts);
  }
  const std::size_t fan_in = w.dim(0), fan_out = w.dim(1), batch = x.numel() / fan_in;
  const MatmulScales s = matmul_scales(fan_in, fan_out, batch);
  // The multiply-back is applied to the cast input rather than the output;
  // the forward value is the same by linearity, and the weight gradient then
  // sees the rescaled input as the plain op would.
  const Tensor xn = value_rescale(scale_bwd(x, s.beta_x), 1.0 / sigma);
  const Tensor xs = value_rescale(maybe_cast(xn, casts.input), sigma);
  const Tensor ws = maybe_cast(scale_bwd(w, s.beta_w), casts.weight);
  const Tensor y = maybe_cast_grad(matmul(xs, ws), casts.grad_output);
  return scale_fwd(y, s.alpha);
}

}  // namespace uscale
