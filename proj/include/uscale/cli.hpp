// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uscale/model.hpp"
#include "uscale/sweep.hpp"
#include "uscale/train.hpp"

namespace uscale {

/// Thrown for bad user input; the CLI maps it to exit code 1.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string path;  // empty: synthetic corpus
  IngestMode mode = IngestMode::text;
  std::size_t synthetic_bytes = 1 << 20;
  std::uint64_t synthetic_seed = 0;
};

struct SweepConfig {
  std::string strategy = "independent";  // independent | random
  std::size_t samples = 16;               // random search only
  HpGrid grid;                            // empty: default_grid(scheme)
  std::vector<std::size_t> widths{64, 128, 256};
  std::vector<double> lr_grid;  // empty: 2^-1 .. 2^5
  std::size_t replicas = 3;
  /// (fixed, transferred) HP pairs for 2-D transfer-error sweeps.
  std::vector<std::pair<std::string, std::string>> pairs;
};

struct RunConfig {
  TransformerConfig model;
  TrainConfig train;
  DataConfig data;
  SweepConfig sweep;
  std::uint64_t seed = 0;
};

/// Sets the dotted `path` to `value`. The value is parsed as JSON when it
/// parses, else kept as a string. Intermediate objects are created.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Parses a full config document. Unknown keys and malformed values throw
/// ConfigError naming the key.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);

TokenStream load_data(const DataConfig& d);

/// Runs the CLI with output on `out`/`err`. Returns the process exit code:
/// 0 success, 1 validation error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uscale
