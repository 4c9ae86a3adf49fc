// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uscale/model.hpp"
#include "uscale/optim.hpp"

namespace uscale {

struct TokenStream {
  std::vector<TokenId> ids;
  std::uint32_t vocab = 256;
  std::string source;
};

enum class IngestMode { text, binary };

/// Text mode maps every byte to its value (vocab 256). Binary mode reads the
/// token-file format:
///   "UTOK" | u32 version = 1 | u32 vocab | u32 bytes per id (2 or 4) |
///   u64 count | ids, all little-endian.
/// Errors carry the byte offset of the problem.
TokenStream ingest(const std::filesystem::path& path, IngestMode mode);

void write_token_file(const TokenStream& s, const std::filesystem::path& path, std::uint32_t bytes_per_id = 2);
/// Inverse of text ingestion; every id must be below 256.
void write_text(const TokenStream& s, const std::filesystem::path& path);

/// Byte-level synthetic corpus: words drawn from a Zipf distribution over a
/// random lexicon, with a first-order Markov dependence between words.
/// Deterministic in `seed`.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t warmup_steps = 20;
  std::size_t batch = 16;
  /// Peak of the schedule for standalone use; train_run takes the peak
  /// from the scheme's eta.
  double peak_lr = 1.0;
  double final_lr_frac = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate at the end only
  std::size_t eval_batches = 4;
  std::size_t rms_every = 0;  // 0: no RMS rows
  AdamConfig adam{0.9, 0.999, 1e-8, 0x1p-13};
  /// Allow more than one pass over the training split.
  bool allow_repeat = false;
  /// Single-precision engine rounding.
  bool fp32 = false;
};

void validate(const TrainConfig& c);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup from 0 to peak, then cosine decay to final_lr_frac * peak at
/// `steps`. Step indices past `steps` hold the final value.
double cosine_schedule(std::size_t step, const TrainConfig& cfg);

struct MetricRow {
  std::size_t step = 0;
  std::string split;  // train | val
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct RunResult {
  double init_loss = 0.0;   // validation loss before the first update
  double final_loss = 0.0;  // validation loss after the last step
  double best_loss = 0.0;
  bool diverged = false;    // non-finite, or more than twice init_loss
  std::size_t steps_run = 0;
  std::vector<MetricRow> metrics;
  std::vector<RmsRow> rms;
};

/// Splits a stream into train (first 95%) and validation (last 5%).
struct Split {
  std::vector<TokenId> train;
  std::vector<TokenId> val;
};
Split split_stream(const TokenStream& s, double val_frac = 0.05);

/// Contiguous batch `index` of `batch` rows of seq_len + 1 tokens; wraps
/// around (with repeat) when allowed.
std::vector<TokenId> batch_at(const std::vector<TokenId>& data, std::size_t index, std::size_t batch,
                              std::size_t seq_len, bool allow_repeat);

/// Mean loss over the first `batches` validation batches (no gradients kept).
double evaluate(const Model& m, const std::vector<TokenId>& val, std::size_t batch, std::size_t batches);

/// Trains `m` in place. Stops early once a training loss is non-finite.
RunResult train_run(Model& m, const TokenStream& stream, const TrainConfig& cfg);

struct AbcCheckResult {
  std::vector<double> losses;          // training losses of the unshifted model
  std::vector<double> shifted_losses;  // same for the theta-shifted twin
  double max_relative_deviation = 0.0;
};

/// Trains `cfg` and its twin with abc_theta = theta on identical data and
/// seed, with weight decay 0 and 64-bit rounding, and compares the
/// per-step training losses.
AbcCheckResult abc_check(const TransformerConfig& cfg, double theta, const TokenStream& stream, TrainConfig tc,
                         std::uint64_t seed);

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& os);
void write_rms_csv(const std::vector<RmsRow>& rows, std::ostream& os);

}  // namespace uscale
