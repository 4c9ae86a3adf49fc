// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "uscale/log.hpp"
#include "uscale/numerics.hpp"
#include "uscale/rng.hpp"

namespace uscale {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double rank_value(const TrialOutcome& o) { return o.diverged || !std::isfinite(o.loss) ? kInf : o.loss; }

// Lowest index of the minimum; +inf everywhere gives npos.
std::size_t argmin_index(const std::vector<double>& v, bool* tie = nullptr) {
  std::size_t best = std::string::npos;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] < kInf && (best == std::string::npos || v[i] < v[best])) best = i;
  if (tie) {
    *tie = false;
    if (best != std::string::npos)
      for (std::size_t i = best + 1; i < v.size(); ++i) *tie |= v[i] == v[best];
  }
  return best;
}

Assignment defaults_for(const HpGrid& grid) {
  Assignment a;
  for (const auto& [name, values] : grid) a[name] = 1.0;
  return a;
}

std::string hp_json(const Assignment& a) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : a) j[k] = v;
  return j.dump();
}

SweepRun make_run(std::string strategy, std::string phase, const Job& job, const TrialOutcome& o) {
  return {std::move(strategy), std::move(phase), job.hps, job.seed, o.loss, o.diverged || !std::isfinite(o.loss)};
}

}  // namespace

void validate_grid(const HpGrid& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep.grid: no hyperparameters");
  for (const auto& [name, values] : grid) {
    if (values.empty()) throw std::invalid_argument("sweep.grid." + name + ": empty value list");
    for (double v : values)
      if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument("sweep.grid." + name + ": values must be positive and finite");
  }
}

std::vector<double> log2_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("log2_grid: need lo <= hi and a positive step");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(std::exp2(lo + static_cast<double>(i) * step));
  return out;
}

HpGrid default_grid(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::u_mup:
      return {{"eta", log2_grid(-1, 3, 0.5)},
              {"alpha_attn_softmax", log2_grid(-2, 2)},
              {"alpha_res", log2_grid(-3, 3)},
              {"alpha_res_attn_ratio", log2_grid(-3, 3)},
              {"alpha_ffn_act", log2_grid(-3, 3)},
              {"alpha_loss_softmax", log2_grid(-3, 3)}};
    case SchemeKind::mup:
      return {{"eta", log2_grid(-10, -6, 0.5)},
              {"eta_emb_hat", log2_grid(0, 8)},
              {"sigma_init", log2_grid(-2, 2)},
              {"alpha_emb", log2_grid(-2, 2)},
              {"alpha_attn", log2_grid(-2, 2)},
              {"alpha_out", log2_grid(-2, 2)}};
    case SchemeKind::sp: return {{"eta", log2_grid(-10, -6, 0.5)}};
  }
  return {};
}

double SweepRun::ranking_loss() const { return diverged || !std::isfinite(final_loss) ? kInf : final_loss; }

std::vector<TrialOutcome> run_jobs(const std::vector<Job>& jobs, const Objective& f, std::size_t workers) {
  std::vector<TrialOutcome> out(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i; !failed && (i = next++) < jobs.size();) {
      try {
        out[i] = f(jobs[i].hps, jobs[i].seed);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(jobs.size(), 1));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

IndependentResult independent_search(const HpGrid& grid, const Objective& f, std::uint64_t seed,
                                     std::size_t workers) {
  validate_grid(grid);
  if (!grid.count("eta")) throw std::invalid_argument("sweep.grid.eta: independent search needs an eta grid");
  IndependentResult res;
  const std::vector<double>& etas = grid.at("eta");

  // Phase 1.
  std::vector<Job> jobs;
  for (double eta : etas) {
    Assignment a = defaults_for(grid);
    a["eta"] = eta;
    jobs.push_back({a, seed});
  }
  auto outcomes = run_jobs(jobs, f, workers);
  std::vector<double> losses;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    res.runs.push_back(make_run("independent", "1", jobs[i], outcomes[i]));
    losses.push_back(rank_value(outcomes[i]));
  }
  bool tie = false;
  std::size_t best = argmin_index(losses, &tie);
  if (best == std::string::npos) throw std::runtime_error("independent search: every phase-1 run diverged");
  if (tie) log_info("independent search: eta tie broken toward the lowest grid index");
  res.phase1 = jobs[best].hps;
  res.phase1_loss = losses[best];

  // Phase 2: all other sweeps in one batch.
  jobs.clear();
  std::vector<std::string> owner;
  for (const auto& [name, values] : grid) {
    if (name == "eta") continue;
    for (double v : values) {
      Assignment a = res.phase1;
      a[name] = v;
      jobs.push_back({a, seed});
      owner.push_back(name);
    }
  }
  outcomes = run_jobs(jobs, f, workers);
  res.phase3 = res.phase1;
  for (const auto& [name, values] : grid) {
    if (name == "eta") continue;
    std::vector<double> l;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (owner[i] != name) continue;
      res.runs.push_back(make_run("independent", "2", jobs[i], outcomes[i]));
      l.push_back(rank_value(outcomes[i]));
      idx.push_back(i);
    }
    const std::size_t b = argmin_index(l, &tie);
    if (b == std::string::npos) {
      log_warning("independent search: every run for " + name + " diverged; keeping 1");
      continue;
    }
    if (tie) log_info("independent search: " + name + " tie broken toward the lowest grid index");
    res.phase3[name] = jobs[idx[b]].hps.at(name);
  }

  // Phase 3.
  const Job combined{res.phase3, seed};
  const TrialOutcome o = run_jobs({combined}, f, 1).front();
  res.runs.push_back(make_run("independent", "3", combined, o));
  res.phase3_loss = rank_value(o);

  if (res.phase3_loss < res.phase1_loss) {
    res.best = res.phase3;
    res.best_loss = res.phase3_loss;
  } else {
    res.best = res.phase1;
    res.best_loss = res.phase1_loss;
  }
  return res;
}

std::vector<SweepRun> random_search(const HpGrid& grid, std::size_t n, const Objective& f, std::uint64_t seed,
                                    std::size_t workers) {
  validate_grid(grid);
  if (n == 0) throw std::invalid_argument("sweep.samples: must be at least 1");
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    Assignment a;
    for (const auto& [name, values] : grid) a[name] = values[rng.below(values.size())];
    jobs.push_back({a, seed});
  }
  const auto outcomes = run_jobs(jobs, f, workers);
  std::vector<SweepRun> runs;
  for (std::size_t i = 0; i < n; ++i) runs.push_back(make_run("random", "sample", jobs[i], outcomes[i]));
  std::stable_sort(runs.begin(), runs.end(),
                   [](const SweepRun& a, const SweepRun& b) { return a.ranking_loss() < b.ranking_loss(); });
  return runs;
}

SweepRun subsample_best(const std::vector<SweepRun>& runs, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > runs.size()) throw std::invalid_argument("subsample_best: k must lie in [1, runs]");
  std::vector<std::size_t> idx(runs.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  std::size_t best = idx[0];
  for (std::size_t i = 1; i < k; ++i) {
    const std::size_t j = idx[i];
    if (runs[j].ranking_loss() < runs[best].ranking_loss() ||
        (runs[j].ranking_loss() == runs[best].ranking_loss() && j < best))
      best = j;
  }
  return runs[best];
}

double transfer_error(const LossGrid& grid) {
  if (grid.empty() || grid.front().empty()) throw std::invalid_argument("transfer_error: empty grid");
  const std::size_t n = grid.size(), m = grid.front().size();
  for (const auto& row : grid) {
    if (row.size() != m) throw std::invalid_argument("transfer_error: ragged grid");
    for (double x : row)
      if (!std::isfinite(x)) throw std::invalid_argument("transfer_error: grid must be finite");
  }
  std::size_t fs = 0, ts = 0;
  bool tie = false;
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t t = 0; t < m; ++t) {
      if (grid[f][t] < grid[fs][ts]) {
        fs = f;
        ts = t;
        tie = false;
      } else if (grid[f][t] == grid[fs][ts] && (f != fs || t != ts)) {
        tie = true;
      }
    }
  if (tie) log_info("transfer_error: global argmin tie broken toward the lowest index");
  if (n == 1) return 0.0;
  double err = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    if (f == fs) continue;
    const std::size_t t = argmin_index(grid[f], &tie);
    if (tie) log_info("transfer_error: row " + std::to_string(f) + " argmin tie broken toward the lowest index");
    err += grid[fs][t] - grid[fs][ts];
  }
  return err / static_cast<double>(n - 1);
}

nlohmann::json transfer_error_summary(const std::map<std::pair<std::string, std::string>, LossGrid>& grids) {
  nlohmann::json pairs = nlohmann::json::array();
  double total = 0.0;
  for (const auto& [key, g] : grids) {
    const double e = transfer_error(g);
    total += e;
    pairs.push_back({{"fixed", key.first}, {"transfer", key.second}, {"transfer_error", e}});
  }
  nlohmann::json j{{"pairs", pairs}};
  j["mean_transfer_error"] = grids.empty() ? 0.0 : total / static_cast<double>(grids.size());
  return j;
}

void write_loss_grid_csv(const LossGrid& grid, std::ostream& os) {
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << '\n';
  }
}

LossGrid read_loss_grid_csv(std::istream& is) {
  LossGrid grid;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size())
        throw std::invalid_argument("loss grid line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      row.push_back(v);
    }
    grid.push_back(std::move(row));
  }
  return grid;
}

LrTransferReport lr_transfer_report(const std::vector<std::size_t>& widths, const std::vector<double>& lr_grid,
                                    std::size_t replicas, const CellObjective& f, std::uint64_t seed,
                                    std::size_t workers) {
  if (widths.empty()) throw std::invalid_argument("lr_transfer.widths: at least one width needed");
  if (lr_grid.empty()) throw std::invalid_argument("lr_transfer.lr_grid: empty");
  if (replicas == 0) throw std::invalid_argument("lr_transfer.replicas: must be positive");
  LrTransferReport rep;
  rep.lr_grid = lr_grid;

  // Jobs carry (width, lr) in the assignment so they can share run_jobs.
  std::vector<Job> jobs;
  for (std::size_t w : widths)
    for (double lr : lr_grid)
      for (std::size_t r = 0; r < replicas; ++r)
        jobs.push_back({{{"width", static_cast<double>(w)}, {"lr", lr}}, derive_seed(seed, r)});
  const Objective adapter = [&f](const Assignment& a, std::uint64_t s) {
    return f(static_cast<std::size_t>(a.at("width")), a.at("lr"), s);
  };
  const auto outcomes = run_jobs(jobs, adapter, workers);

  std::size_t k = 0;
  for (std::size_t w : widths) {
    LrWidthSummary ws;
    ws.width = w;
    std::vector<double> means;
    for (double lr : lr_grid) {
      LrCell c;
      c.width = w;
      c.lr = lr;
      for (std::size_t r = 0; r < replicas; ++r, ++k) {
        const double v = rank_value(outcomes[k]);
        c.losses.push_back(v);
        c.diverged += v == kInf;
      }
      if (c.diverged) {
        c.mean = kInf;
        c.sem = 0.0;
      } else {
        c.mean = std::accumulate(c.losses.begin(), c.losses.end(), 0.0) / static_cast<double>(replicas);
        double ss = 0.0;
        for (double x : c.losses) ss += (x - c.mean) * (x - c.mean);
        c.sem = replicas > 1 ? std::sqrt(ss / static_cast<double>(replicas - 1) / static_cast<double>(replicas))
                             : 0.0;
      }
      means.push_back(c.mean);
      rep.cells.push_back(std::move(c));
    }
    bool tie = false;
    const std::size_t b = argmin_index(means, &tie);
    if (b == std::string::npos) {
      ws.all_diverged = true;
      ws.loss = kInf;
    } else {
      if (tie) log_info("lr transfer: width " + std::to_string(w) + " argmin tie broken toward the lowest LR");
      ws.argmin = b;
      ws.lr = lr_grid[b];
      ws.loss = means[b];
    }
    rep.widths.push_back(ws);
  }
  std::size_t lo = std::string::npos, hi = 0;
  for (const auto& ws : rep.widths) {
    if (ws.all_diverged) continue;
    lo = std::min(lo, ws.argmin);
    hi = std::max(hi, ws.argmin);
  }
  rep.drift_steps = lo == std::string::npos ? 0 : hi - lo;
  return rep;
}

void write_lr_transfer_csv(const LrTransferReport& r, std::ostream& os) {
  os << "width,lr,mean,sem,lo,hi,replicas,diverged\n";
  for (const auto& c : r.cells)
    os << c.width << ',' << format_double(c.lr) << ',' << format_double(c.mean) << ',' << format_double(c.sem) << ','
       << format_double(c.mean - 2 * c.sem) << ',' << format_double(c.mean + 2 * c.sem) << ',' << c.losses.size()
       << ',' << c.diverged << '\n';
}

nlohmann::json lr_transfer_json(const LrTransferReport& r) {
  nlohmann::json widths = nlohmann::json::array();
  for (const auto& w : r.widths) {
    nlohmann::json j{{"width", w.width}, {"all_diverged", w.all_diverged}};
    if (!w.all_diverged) {
      j["argmin_index"] = w.argmin;
      j["argmin_lr"] = w.lr;
      j["loss"] = w.loss;
    }
    widths.push_back(j);
  }
  return {{"lr_grid", r.lr_grid}, {"widths", widths}, {"drift_steps", r.drift_steps}};
}

void write_sweep_csv(const std::vector<SweepRun>& runs, std::ostream& os) {
  os << "strategy,phase,hp_json,seed,final_loss,diverged\n";
  for (const auto& r : runs) {
    std::string hp = hp_json(r.hps);
    std::string quoted = "\"";
    for (char c : hp) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
    quoted += '"';
    os << r.strategy << ',' << r.phase << ',' << quoted << ',' << r.seed << ',' << format_double(r.final_loss) << ','
       << (r.diverged ? 1 : 0) << '\n';
  }
}

TransformerConfig at_width(const TransformerConfig& base, std::size_t width) {
  TransformerConfig c = base;
  c.width = width;
  if (base.d_head == 0 || width % base.d_head != 0)
    throw std::invalid_argument("model.width: " + std::to_string(width) + " is not a multiple of d_head " +
                                std::to_string(base.d_head));
  c.n_heads = width / base.d_head;
  if (base.ffn_hidden != 0) c.ffn_hidden = base.ffn_hidden * width / base.width;
  return c;
}

Objective training_objective(const TransformerConfig& base, const TrainConfig& tc, const TokenStream& data) {
  return [base, tc, &data](const Assignment& a, std::uint64_t seed) {
    TransformerConfig c = base;
    for (const auto& [name, v] : a) set_hp(c.scheme, name, v);
    validate(c);
    Model m = build_model(c, seed);
    const RunResult r = train_run(m, data, tc);
    return TrialOutcome{r.final_loss, r.diverged};
  };
}

CellObjective lr_cell_objective(const TransformerConfig& base, const TrainConfig& tc, const TokenStream& data) {
  return [base, tc, &data](std::size_t width, double lr, std::uint64_t seed) {
    TransformerConfig c = at_width(base, width);
    c.scheme.hps.eta = lr;
    validate(c);
    Model m = build_model(c, seed);
    const RunResult r = train_run(m, data, tc);
    return TrialOutcome{r.final_loss, r.diverged};
  };
}

}  // namespace uscale
