// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uscale/ops.hpp"
#include "uscale/parametrization.hpp"
#include "uscale/residual.hpp"
#include "uscale/scaled_ops.hpp"

namespace uscale {

enum class PrecisionMode { full, fp8_primary, fp8_partial };

std::string to_string(PrecisionMode m);
PrecisionMode precision_mode_from_string(std::string_view s);

struct PrecisionPolicy {
  PrecisionMode mode = PrecisionMode::full;
  /// Layer suffixes ("attn.o", "ffn.down") whose input is divided by its std
  /// before the input cast. Only used when `dynamic_rescale` is set.
  std::set<std::string> dynamic_rescale_layers{"attn.o", "ffn.down"};
  bool dynamic_rescale = false;
};

/// Casts of one matmul under `policy`. `layer` is the parameter-name suffix
/// ("attn.q", ..., "ffn.down", "readout").
MatmulCasts casts_for(const PrecisionPolicy& policy, const std::string& layer);

struct TransformerConfig {
  std::size_t width = 64;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 2;
  std::size_t d_head = 32;
  std::size_t vocab = 256;
  std::size_t seq_len = 128;
  /// FFN hidden size; 0 means ceil(8 width / 3).
  std::size_t ffn_hidden = 0;
  Scheme scheme;
  bool tied_embeddings = false;
  PrecisionPolicy precision;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  /// abc-shift applied to every weight (mup and sp only).
  double abc_theta = 1.0;

  std::size_t depth() const { return 2 * n_blocks; }
  std::size_t ffn_size() const;
  std::size_t ffn_size_at(std::size_t w) const;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const TransformerConfig& cfg);

nlohmann::json config_to_json(const TransformerConfig& cfg);
/// Missing keys keep their defaults.
TransformerConfig config_from_json(const nlohmann::json& j);

struct NamedParam {
  std::string name;
  ParamTag tag;
  AbcMultipliers abc;  // after abc_theta
  Tensor value;
};

struct Model {
  TransformerConfig cfg;
  ResidualSchedule schedule;  // u_mup only
  std::vector<NamedParam> params;

  const NamedParam& param(const std::string& name) const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
};

Model build_model(const TransformerConfig& cfg, std::uint64_t seed);

/// Sum of all weight shapes for `cfg`.
std::size_t parameter_count(const TransformerConfig& cfg);

/// Per-parameter learning rates for a scheduled step LR.
std::vector<double> param_lrs(const Model& m, double step_lr);

/// Tensors seen by one matmul: its input before any cast, the weight it
/// multiplies (the parameter for u_mup, A w otherwise) and its output.
struct MatmulRecord {
  std::string name;
  Tensor input;
  Tensor weight;
  Tensor output;
};

struct ForwardResult {
  Tensor loss;
  std::vector<MatmulRecord> matmuls;
  /// Residual stream after the embedding and after every branch.
  std::vector<Tensor> stream;
};

/// Next-token loss on `batch` rows of seq_len + 1 tokens each.
ForwardResult forward(const Model& m, std::span<const TokenId> tokens, std::size_t batch);
Tensor forward_loss(const Model& m, std::span<const TokenId> tokens, std::size_t batch);

struct RmsRow {
  std::size_t step = 0;
  std::string tensor;
  std::string role;  // input | weight | grad_out
  double rms = 0.0;
  double abs_max = 0.0;
};

/// Three rows per matmul from a forward result whose loss has been
/// back-propagated.
std::vector<RmsRow> rms_rows(const ForwardResult& r, std::size_t step);

/// Forward and backward on `tokens`, then rms_rows. Parameter gradients are
/// cleared before returning.
std::vector<RmsRow> rms_report(const Model& m, std::span<const TokenId> tokens, std::size_t batch,
                               std::size_t step = 0);

/// Multiplier sites in a loss graph.
struct GraphAudit {
  std::map<std::string, std::size_t> op_counts;
  /// (op, value) for every op that carries a tunable multiplier: the
  /// attention logit scale, the gated-SiLU alpha and the loss-softmax alpha.
  std::vector<std::pair<std::string, double>> multiplier_sites;
  /// Exact scalar multiplies feeding a zero-homogeneous op (rmsnorm).
  std::size_t scales_into_homogeneous = 0;
};

GraphAudit audit_graph(const Tensor& loss);

/// checkpoint.bin holds every parameter as little-endian doubles in
/// manifest order; checkpoint.json holds the config and per-tensor names,
/// shapes, tags and byte offsets.
void save_checkpoint(const Model& m, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

nlohmann::json param_report(const Model& m);

}  // namespace uscale
