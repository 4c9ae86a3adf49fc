// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "uscale/rng.hpp"
#include "uscale/tensor.hpp"

namespace uscale {

enum class ParamKind { weight_input, weight_hidden, weight_output, bias, norm };

/// Shape-level description of a parameter. Weights are stored as
/// [fan_in, fan_out] (applied as x @ w); the embedding table is
/// [vocab, width] with fan_in = vocab.
struct ParamTag {
  ParamKind kind = ParamKind::weight_hidden;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
  bool on_residual_branch = false;
  /// fan_in of this tensor in the base-width model; 0 means fan_in.
  /// Only the mup scheme reads it.
  std::size_t base_fan_in = 0;
};

enum class SchemeKind { u_mup, mup, sp };

struct HpSet {
  double eta = 1.0;
  // u-mup
  double alpha_ffn_act = 1.0;
  double alpha_attn_softmax = 1.0;
  double alpha_res = 1.0;
  double alpha_res_attn_ratio = 1.0;
  double alpha_loss_softmax = 1.0;
  // mup
  double sigma_init = 1.0;
  double alpha_emb = 1.0;
  double alpha_attn = 1.0;
  double alpha_out = 1.0;
  double eta_emb_hat = 1.0;
  /// Per-tensor LR multipliers keyed by parameter name; absent means 1.
  std::map<std::string, double> lr_multipliers;
};

struct Scheme {
  SchemeKind kind = SchemeKind::u_mup;
  HpSet hps;
  std::size_t base_width = 0;  // mup only
  std::size_t base_depth = 0;  // mup only, in residual branches
};

struct AbcMultipliers {
  double A = 1.0;
  double B = 1.0;
  double C = 1.0;
  std::optional<double> A_bwd_override;
};

std::string to_string(ParamKind k);
std::string to_string(SchemeKind k);
SchemeKind scheme_kind_from_string(std::string_view s);

/// Names of the HPs that belong to a scheme.
const std::vector<std::string>& hp_names(SchemeKind k);

/// Reads or writes an HP by name. Throws std::invalid_argument for a name
/// that is not an HP of the scheme (e.g. sigma_init under u_mup).
double get_hp(const Scheme& s, std::string_view name);
void set_hp(Scheme& s, std::string_view name, double value);

/// Throws std::invalid_argument on a non-positive HP or missing base shapes.
void validate_scheme(const Scheme& s);

/// sigma_init of a mup scheme; u_mup has no such HP and throws.
double sigma_init(const Scheme& s);

/// A (parameter multiplier), B (init std) and C (Adam LR, including eta)
/// for one tensor. `depth` counts residual branches.
AbcMultipliers abc_multipliers(const ParamTag& tag, std::size_t depth, const Scheme& scheme);

/// (A theta, B / theta, C / theta).
AbcMultipliers abc_shift(const AbcMultipliers& m, double theta);

/// step_lr times C / eta times the per-tensor multiplier for `name`.
/// `step_lr` is the scheduled LR, whose peak is eta.
double lr_for_param(const ParamTag& tag, std::size_t depth, const Scheme& scheme, double step_lr,
                    std::string_view name = {});

/// Init std of the sp scheme: 1/sqrt(fan_out) for the embedding table,
/// 1/sqrt(fan_in) otherwise.
double sp_init_std(const ParamTag& tag);

/// Truncation point of the sp init, in units of the underlying normal's std.
inline constexpr double kSpTruncation = 2.0;

/// [fan_in, fan_out] tensor with std B. mup and u_mup draw plain normals; sp
/// draws a normal truncated at kSpTruncation, rescaled so its std is B.
/// Biases start at 0 and norm gains at 1.
Tensor init_param(const ParamTag& tag, std::size_t depth, const Scheme& scheme, Rng& rng,
                  bool requires_grad = true);

nlohmann::json scheme_to_json(const Scheme& s);
Scheme scheme_from_json(const nlohmann::json& j);

/// One row of the parametrization dump.
nlohmann::json param_entry_json(const std::string& name, const ParamTag& tag, std::size_t depth,
                                const Scheme& scheme);

}  // namespace uscale
