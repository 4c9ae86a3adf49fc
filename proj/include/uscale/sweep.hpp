// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uscale/model.hpp"
#include "uscale/train.hpp"

namespace uscale {

using Assignment = std::map<std::string, double>;
/// Ordered candidate values per hyperparameter.
using HpGrid = std::map<std::string, std::vector<double>>;

/// Throws unless every grid is non-empty with positive, finite values.
void validate_grid(const HpGrid& grid);

/// 2^lo, 2^(lo + step), ..., up to 2^hi inclusive.
std::vector<double> log2_grid(double lo, double hi, double step = 1.0);

/// Search ranges per scheme: eta and every other scheme HP.
HpGrid default_grid(SchemeKind kind);

struct TrialOutcome {
  double loss = 0.0;
  bool diverged = false;
};

/// One training run (or synthetic evaluation) for an assignment and seed.
/// Must be safe to call from several threads at once.
using Objective = std::function<TrialOutcome(const Assignment&, std::uint64_t seed)>;

struct SweepRun {
  std::string strategy;
  std::string phase;
  Assignment hps;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  bool diverged = false;

  /// +inf for diverged or non-finite runs.
  double ranking_loss() const;
};

struct Job {
  Assignment hps;
  std::uint64_t seed = 0;
};

/// Evaluates every job on `workers` threads. Results are in job order.
/// The first exception thrown by any job is rethrown after all workers stop.
std::vector<TrialOutcome> run_jobs(const std::vector<Job>& jobs, const Objective& f, std::size_t workers);

struct IndependentResult {
  Assignment best;
  double best_loss = 0.0;
  Assignment phase1;  // argmin-eta assignment
  double phase1_loss = 0.0;
  Assignment phase3;  // combined argmins
  double phase3_loss = 0.0;
  std::vector<SweepRun> runs;
};

/// Three-phase search. Phase 1 sweeps "eta" with every other HP at 1. Phase 2
/// sweeps each other HP alone at the phase-1 eta. Phase 3 evaluates the
/// combination of the phase-2 argmins once. Returns the better of phases 1
/// and 3. Every run uses `seed`.
IndependentResult independent_search(const HpGrid& grid, const Objective& f, std::uint64_t seed,
                                     std::size_t workers = 1);

/// `n` assignments drawn uniformly and independently from the grid product,
/// ranked by loss (ties keep draw order). Run i uses derive_seed(seed, i)
/// for sampling only; every training run uses `seed`.
std::vector<SweepRun> random_search(const HpGrid& grid, std::size_t n, const Objective& f, std::uint64_t seed,
                                    std::size_t workers = 1);

/// Best run among `k` drawn without replacement from `runs`; simulates a
/// shorter random search.
SweepRun subsample_best(const std::vector<SweepRun>& runs, std::size_t k, std::uint64_t seed);

/// Rows index the fixed HP, columns the transferred HP.
using LossGrid = std::vector<std::vector<double>>;

/// Mean excess loss at the globally best fixed-HP value when the transferred
/// HP takes each other row's optimum instead of the global optimum. Argmin
/// ties go to the lowest index and are logged. One row gives 0.
double transfer_error(const LossGrid& grid);

/// Transfer errors for named (fixed, transferred) HP pairs plus their mean.
nlohmann::json transfer_error_summary(const std::map<std::pair<std::string, std::string>, LossGrid>& grids);

void write_loss_grid_csv(const LossGrid& grid, std::ostream& os);
LossGrid read_loss_grid_csv(std::istream& is);

struct LrCell {
  std::size_t width = 0;
  double lr = 0.0;
  std::vector<double> losses;  // one per replica; diverged replicas are +inf
  std::size_t diverged = 0;
  double mean = 0.0;  // +inf if any replica diverged
  double sem = 0.0;
};

struct LrWidthSummary {
  std::size_t width = 0;
  std::size_t argmin = 0;  // index into the LR grid
  double lr = 0.0;
  double loss = 0.0;
  bool all_diverged = false;
};

struct LrTransferReport {
  std::vector<double> lr_grid;
  std::vector<LrCell> cells;  // width-major
  std::vector<LrWidthSummary> widths;
  /// max argmin index - min argmin index over widths with a finite optimum.
  std::size_t drift_steps = 0;
};

/// Trains replica r of every (width, lr) cell with seed derive_seed(seed, r).
using CellObjective = std::function<TrialOutcome(std::size_t width, double lr, std::uint64_t seed)>;

LrTransferReport lr_transfer_report(const std::vector<std::size_t>& widths, const std::vector<double>& lr_grid,
                                    std::size_t replicas, const CellObjective& f, std::uint64_t seed,
                                    std::size_t workers = 1);

/// CSV: width,lr,mean,sem,lo,hi,replicas,diverged with lo/hi = mean -/+ 2 sem.
void write_lr_transfer_csv(const LrTransferReport& r, std::ostream& os);
nlohmann::json lr_transfer_json(const LrTransferReport& r);

/// CSV: strategy,phase,hp_json,seed,final_loss,diverged.
void write_sweep_csv(const std::vector<SweepRun>& runs, std::ostream& os);

/// Model config at `width`: heads follow width / d_head, FFN size and fans
/// follow the width, mup base shapes stay fixed.
TransformerConfig at_width(const TransformerConfig& base, std::size_t width);

/// Objective that builds `base` with the assignment applied through
/// set_hp and trains it on `data`. The model seed is the run seed.
Objective training_objective(const TransformerConfig& base, const TrainConfig& tc, const TokenStream& data);

/// Cell objective: `base` at the cell width with eta = lr.
CellObjective lr_cell_objective(const TransformerConfig& base, const TrainConfig& tc, const TokenStream& data);

}  // namespace uscale
