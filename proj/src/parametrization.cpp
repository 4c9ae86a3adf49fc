// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/parametrization.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace uscale {

namespace {

double* hp_slot(HpSet& h, SchemeKind k, std::string_view name) {
  if (name == "eta") return &h.eta;
  if (k == SchemeKind::u_mup) {
    if (name == "alpha_ffn_act") return &h.alpha_ffn_act;
    if (name == "alpha_attn_softmax") return &h.alpha_attn_softmax;
    if (name == "alpha_res") return &h.alpha_res;
    if (name == "alpha_res_attn_ratio") return &h.alpha_res_attn_ratio;
    if (name == "alpha_loss_softmax") return &h.alpha_loss_softmax;
  } else if (k == SchemeKind::mup) {
    if (name == "sigma_init") return &h.sigma_init;
    if (name == "alpha_emb") return &h.alpha_emb;
    if (name == "alpha_attn") return &h.alpha_attn;
    if (name == "alpha_out") return &h.alpha_out;
    if (name == "eta_emb_hat") return &h.eta_emb_hat;
  }
  throw std::invalid_argument("'" + std::string(name) + "' is not a hyperparameter of the " + to_string(k) +
                              " scheme");
}

double base_ratio(const ParamTag& tag) {
  const double base = static_cast<double>(tag.base_fan_in ? tag.base_fan_in : tag.fan_in);
  return base / static_cast<double>(tag.fan_in);
}

double sqrt_d(std::size_t n) { return std::sqrt(static_cast<double>(n)); }

// Std of a unit normal truncated to [-t, t].
double truncated_std(double t) {
  const double phi = std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
  const double mass = std::erf(t / std::numbers::sqrt2);
  return std::sqrt(1.0 - 2.0 * t * phi / mass);
}

}  // namespace

std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::weight_input: return "weight_input";
    case ParamKind::weight_hidden: return "weight_hidden";
    case ParamKind::weight_output: return "weight_output";
    case ParamKind::bias: return "bias";
    case ParamKind::norm: return "norm";
  }
  return "?";
}

std::string to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::u_mup: return "u_mup";
    case SchemeKind::mup: return "mup";
    case SchemeKind::sp: return "sp";
  }
  return "?";
}

SchemeKind scheme_kind_from_string(std::string_view s) {
  if (s == "u_mup" || s == "u-mup") return SchemeKind::u_mup;
  if (s == "mup") return SchemeKind::mup;
  if (s == "sp") return SchemeKind::sp;
  throw std::invalid_argument("unknown scheme '" + std::string(s) + "' (expected u_mup, mup or sp)");
}

const std::vector<std::string>& hp_names(SchemeKind k) {
  static const std::vector<std::string> u{"eta", "alpha_ffn_act", "alpha_attn_softmax", "alpha_res",
                                          "alpha_res_attn_ratio", "alpha_loss_softmax"};
  static const std::vector<std::string> m{"eta", "sigma_init", "alpha_emb", "alpha_attn", "alpha_out",
                                          "eta_emb_hat"};
  static const std::vector<std::string> s{"eta"};
  switch (k) {
    case SchemeKind::u_mup: return u;
    case SchemeKind::mup: return m;
    case SchemeKind::sp: return s;
  }
  return s;
}

double get_hp(const Scheme& s, std::string_view name) {
  return *hp_slot(const_cast<HpSet&>(s.hps), s.kind, name);
}

void set_hp(Scheme& s, std::string_view name, double value) { *hp_slot(s.hps, s.kind, name) = value; }

void validate_scheme(const Scheme& s) {
  for (const auto& n : hp_names(s.kind))
    if (!(get_hp(s, n) > 0.0) || !std::isfinite(get_hp(s, n)))
      throw std::invalid_argument("hyperparameter '" + n + "' must be positive and finite");
  for (const auto& [name, v] : s.hps.lr_multipliers)
    if (!(v > 0.0)) throw std::invalid_argument("lr multiplier for '" + name + "' must be positive");
  if (s.kind == SchemeKind::mup && (s.base_width == 0 || s.base_depth == 0))
    throw std::invalid_argument("mup scheme needs base_width and base_depth");
}

double sigma_init(const Scheme& s) {
  if (s.kind != SchemeKind::mup)
    throw std::invalid_argument("sigma_init is not a hyperparameter of the " + to_string(s.kind) + " scheme");
  return s.hps.sigma_init;
}

AbcMultipliers abc_multipliers(const ParamTag& tag, std::size_t depth, const Scheme& scheme) {
  if (tag.fan_in == 0 || tag.fan_out == 0) throw std::invalid_argument("abc_multipliers: zero fan");
  const HpSet& h = scheme.hps;
  AbcMultipliers m;
  m.C = h.eta;
  if (tag.kind == ParamKind::bias || tag.kind == ParamKind::norm) return m;

  switch (scheme.kind) {
    case SchemeKind::u_mup:
      switch (tag.kind) {
        case ParamKind::weight_input: m.C = h.eta / sqrt_d(tag.fan_out); break;
        case ParamKind::weight_hidden:
          m.A = 1.0 / sqrt_d(tag.fan_in);
          m.C = h.eta / sqrt_d(tag.fan_in);
          break;
        case ParamKind::weight_output:
          m.A = 1.0 / static_cast<double>(tag.fan_in);
          m.A_bwd_override = 1.0 / sqrt_d(tag.fan_in);
          break;
        default: break;
      }
      if (tag.on_residual_branch) {
        if (depth == 0) throw std::invalid_argument("abc_multipliers: residual weight with depth 0");
        m.C /= sqrt_d(depth);
      }
      break;
    case SchemeKind::mup: {
      const double r = base_ratio(tag);
      switch (tag.kind) {
        case ParamKind::weight_input:
          m.A = h.alpha_emb;
          m.B = h.sigma_init;
          m.C = h.eta * h.eta_emb_hat;
          break;
        case ParamKind::weight_hidden:
          m.B = h.sigma_init * std::sqrt(r);
          m.C = h.eta * r;
          break;
        case ParamKind::weight_output:
          m.A = h.alpha_out * r;
          m.B = h.sigma_init;
          break;
        default: break;
      }
      if (tag.on_residual_branch) {
        if (depth == 0 || scheme.base_depth == 0)
          throw std::invalid_argument("abc_multipliers: mup residual weight needs depth and base_depth");
        m.C *= std::sqrt(static_cast<double>(scheme.base_depth) / static_cast<double>(depth));
      }
      break;
    }
    case SchemeKind::sp: m.B = sp_init_std(tag); break;
  }
  return m;
}

AbcMultipliers abc_shift(const AbcMultipliers& m, double theta) {
  if (!(theta > 0.0)) throw std::invalid_argument("abc_shift: theta must be positive");
  AbcMultipliers out = m;
  out.A = m.A * theta;
  out.B = m.B / theta;
  out.C = m.C / theta;
  if (m.A_bwd_override) out.A_bwd_override = *m.A_bwd_override * theta;
  return out;
}

double lr_for_param(const ParamTag& tag, std::size_t depth, const Scheme& scheme, double step_lr,
                    std::string_view name) {
  Scheme unit = scheme;
  unit.hps.eta = 1.0;
  const double c_rel = abc_multipliers(tag, depth, unit).C;
  double mult = 1.0;
  if (!name.empty()) {
    const auto it = scheme.hps.lr_multipliers.find(std::string(name));
    if (it != scheme.hps.lr_multipliers.end()) mult = it->second;
  }
  return step_lr * c_rel * mult;
}

double sp_init_std(const ParamTag& tag) {
  return tag.kind == ParamKind::weight_input ? 1.0 / sqrt_d(tag.fan_out) : 1.0 / sqrt_d(tag.fan_in);
}

Tensor init_param(const ParamTag& tag, std::size_t depth, const Scheme& scheme, Rng& rng, bool requires_grad) {
  const Shape shape{tag.fan_in, tag.fan_out};
  if (tag.kind == ParamKind::bias) return Tensor::zeros({tag.fan_out}, requires_grad);
  if (tag.kind == ParamKind::norm) return Tensor::full({tag.fan_out}, 1.0, requires_grad);
  const double B = abc_multipliers(tag, depth, scheme).B;
  if (scheme.kind != SchemeKind::sp) return Tensor::randn(shape, rng, B, requires_grad);
  const double sigma = B / truncated_std(kSpTruncation);
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    double z;
    do z = rng.normal();
    while (std::fabs(z) > kSpTruncation);
    x = sigma * z;
  }
  return Tensor::from(shape, std::move(v), requires_grad);
}

nlohmann::json scheme_to_json(const Scheme& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  for (const auto& n : hp_names(s.kind)) j["hps"][n] = get_hp(s, n);
  if (!s.hps.lr_multipliers.empty()) j["lr_multipliers"] = s.hps.lr_multipliers;
  if (s.kind == SchemeKind::mup) {
    j["base_width"] = s.base_width;
    j["base_depth"] = s.base_depth;
  }
  return j;
}

Scheme scheme_from_json(const nlohmann::json& j) {
  Scheme s;
  s.kind = scheme_kind_from_string(j.value("kind", std::string("u_mup")));
  if (j.contains("hps")) {
    for (const auto& [k, v] : j.at("hps").items()) {
      if (!v.is_number()) throw std::invalid_argument("hyperparameter '" + k + "' must be a number");
      set_hp(s, k, v.get<double>());
    }
  }
  if (j.contains("lr_multipliers")) s.hps.lr_multipliers = j.at("lr_multipliers").get<std::map<std::string, double>>();
  s.base_width = j.value("base_width", std::size_t{0});
  s.base_depth = j.value("base_depth", std::size_t{0});
  return s;
}

nlohmann::json param_entry_json(const std::string& name, const ParamTag& tag, std::size_t depth,
                                const Scheme& scheme) {
  const AbcMultipliers m = abc_multipliers(tag, depth, scheme);
  nlohmann::json j{{"name", name},
                   {"kind", to_string(tag.kind)},
                   {"fan_in", tag.fan_in},
                   {"fan_out", tag.fan_out},
                   {"on_residual_branch", tag.on_residual_branch},
                   {"A", m.A},
                   {"B", m.B},
                   {"C", m.C},
                   {"lr_multiplier", lr_for_param(tag, depth, scheme, 1.0, name)}};
  if (m.A_bwd_override) j["A_bwd"] = *m.A_bwd_override;
  return j;
}

}  // namespace uscale
