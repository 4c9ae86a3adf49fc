// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uscale {

namespace {

void check_config(const AdamConfig& c) {
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw std::invalid_argument("adamw: betas must lie in [0, 1)");
  if (!(c.eps > 0.0)) throw std::invalid_argument("adamw: eps must be positive");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("adamw: weight decay must be non-negative");
}

}  // namespace

void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, const AdamConfig& cfg) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adamw: negative learning rate " + std::to_string(lr));
  if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("adamw: negative weight decay");
  if (t == 0) throw std::invalid_argument("adamw: step count starts at 1");
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size())
    throw std::invalid_argument("adamw: size mismatch");
  const double td = static_cast<double>(t);
  const double c1 = 1.0 - std::pow(cfg.beta1, td);
  const double c2 = 1.0 - std::pow(cfg.beta2, td);
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1, vhat = v[i] / c2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i];
  }
}

AdamW::AdamW(AdamConfig cfg) : cfg_(cfg) { check_config(cfg_); }

void AdamW::step(std::span<Tensor> params, std::span<const double> lrs, std::span<const bool> decay) {
  if (lrs.size() != params.size()) throw std::invalid_argument("adamw: one learning rate per parameter needed");
  if (!decay.empty() && decay.size() != params.size())
    throw std::invalid_argument("adamw: decay mask size mismatch");
  if (m_.empty()) {
    for (const Tensor& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  } else if (m_.size() != params.size()) {
    throw std::invalid_argument("adamw: parameter list changed between steps");
  }
  ++t_;
  AdamConfig c = cfg_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].numel() != m_[i].size()) throw std::invalid_argument("adamw: parameter shape changed");
    c.weight_decay = decay.empty() || decay[i] ? cfg_.weight_decay : 0.0;
    const std::vector<double> g = params[i].grad_or_zeros();
    adamw_update(params[i].mutable_data(), g, m_[i], v_[i], t_, lrs[i], c);
  }
}

}  // namespace uscale
