// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion. Criteria listed
// in kKnownFailures fail for documented reasons (see README); they still
// print FAIL, but do not fail the process.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fp8_oracle.hpp"
#include "uscale/model.hpp"
#include "uscale/numerics.hpp"
#include "uscale/parametrization.hpp"
#include "uscale/residual.hpp"
#include "uscale/scaled_ops.hpp"
#include "uscale/sweep.hpp"
#include "uscale/train.hpp"

using namespace uscale;
namespace fs = std::filesystem;

namespace {

const std::set<int> kKnownFailures{4, 6};

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

struct Context {
  fs::path out;
  std::size_t workers = 1;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor randn(Shape s, std::uint64_t seed, double std = 1.0, bool grad = false) {
  Rng rng(seed);
  return Tensor::randn(std::move(s), rng, std, grad);
}

void backward_randn(const Tensor& y, std::uint64_t seed) {
  const Tensor g = randn(y.shape(), seed);
  backward(y, g.data());
}

double two_sig(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", x);
  return std::strtod(buf, nullptr);
}

// ---- 1 ---------------------------------------------------------------------

Outcome quantizer_exactness() {
  std::size_t mismatches = 0, checked = 0;
  for (const char* name : {"e4m3", "e5m2"}) {
    const FloatFormat f = make_format(name);
    const test::NearestOracle oracle(f);
    for (double v : test::decode_all(f)) {
      ++checked;
      const double q = quantize(v, f);
      if (std::isnan(v) ? !std::isnan(q) : (std::isfinite(v) && q != v)) ++mismatches;
    }
    // Random finite inputs: log-uniform magnitudes spanning subnormals to
    // beyond the max, plus exact midpoints between neighbouring codes.
    const auto& vals = oracle.values();
    Rng rng(0xF8 + f.exponent_bits);
    const double lo = std::log2(f.min_subnormal) - 2, hi = std::log2(f.max_finite) + 1;
    for (int i = 0; i < 100000; ++i) {
      double x;
      if (i % 4 == 0) {
        const std::size_t j = rng.below(vals.size() - 1);
        x = 0.5 * (vals[j] + vals[j + 1]);
      } else {
        x = std::exp2(lo + (hi - lo) * rng.uniform());
      }
      if (rng.below(2)) x = -x;
      ++checked;
      if (quantize(x, f) != oracle(x)) ++mismatches;
    }
  }
  struct Row {
    const char* name;
    double max, min_normal, min_subnormal;
  };
  const Row table[] = {{"fp32", 3.4e38, 1.2e-38, 1.4e-45}, {"bf16", 3.4e38, 1.2e-38, 9.2e-41},
                       {"fp16", 65504, 6.1e-5, 6.0e-8},    {"e5m2", 57344, 6.1e-5, 1.5e-5},
                       {"e4m3", 448, 1.6e-2, 2.0e-3}};
  int table_bad = 0;
  for (const Row& r : table) {
    const FloatFormat f = make_format(r.name);
    table_bad += two_sig(f.max_finite) != two_sig(r.max);
    table_bad += two_sig(f.min_normal) != r.min_normal;
    table_bad += two_sig(f.min_subnormal) != r.min_subnormal;
  }
  return {mismatches == 0 && table_bad == 0,
          fmt("%zu/%zu quantize mismatches vs oracle, %d preset constants off", mismatches, checked, table_bad)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome unit_scale_suite() {
  struct Check {
    std::string what;
    double value;
    double tol;
  };
  std::vector<Check> checks;
  auto sd = [](std::span<const double> xs) { return stats(xs).std; };
  constexpr double kClosed = 0.01, kEmpirical = 0.1;

  {
    const Tensor x = randn({2048, 512}, 1, 1.0, true), w = randn({512, 512}, 2, 1.0, true);
    const Tensor y = u_matmul(x, w);
    checks.push_back({"u_matmul out", sd(y.data()), kClosed});
    backward_randn(y, 3);
    checks.push_back({"u_matmul grad_x", sd(x.grad()), kClosed});
    checks.push_back({"u_matmul grad_w", sd(w.grad()), kClosed});
  }
  {
    const Tensor x = randn({2048, 512}, 4, 1.0, true), w = randn({512, 512}, 5, 1.0, true);
    const Tensor y = dynamic_rescale_matmul(x, w);
    checks.push_back({"dynamic_rescale_matmul out", sd(y.data()), kClosed});
    backward_randn(y, 6);
    checks.push_back({"dynamic_rescale_matmul grad_x", sd(x.grad()), kClosed});
  }
  {
    // The readout keeps the 1/fan_in forward factor, so its unit-scale
    // statement is on sqrt(fan_in) std(out).
    const Tensor x = randn({2048, 512}, 7, 1.0, true), w = randn({512, 512}, 8, 1.0, true);
    const Tensor y = u_linear_output(x, w);
    checks.push_back({"u_linear_output sqrt(fan_in)*out", std::sqrt(512.0) * sd(y.data()), kClosed});
    backward_randn(y, 9);
    checks.push_back({"u_linear_output grad_x", sd(x.grad()), kClosed});
    checks.push_back({"u_linear_output grad_w", sd(w.grad()), kClosed});
  }
  {
    const Tensor table = randn({1024, 1024}, 10);
    Rng rng(11);
    std::vector<TokenId> ids(1024);
    for (auto& id : ids) id = static_cast<TokenId>(rng.below(1024));
    checks.push_back({"u_embedding_lookup out", sd(u_embedding_lookup(ids, table).data()), kClosed});
  }
  {
    const Tensor x = randn({1024, 1024}, 12, 3.0);
    checks.push_back({"u_rmsnorm out", sd(u_rmsnorm(x).data()), kClosed});
  }
  {
    // The constrained form carries the forward factor backwards, so the
    // gradient scale is checked on the unconstrained op.
    const Tensor x = randn({1 << 20}, 13, 1.0, true);
    checks.push_back({"u_hardtanh out", sd(u_hardtanh(x).data()), kClosed});
    backward_randn(u_hardtanh(x, Constraint::none), 14);
    checks.push_back({"u_hardtanh grad (unconstrained)", sd(x.grad()), kClosed});
  }
  {
    const std::size_t n = 4096, s = 256;
    Rng rng(15);
    std::vector<TokenId> t(n);
    for (auto& id : t) id = static_cast<TokenId>(rng.below(s));
    const Tensor z = randn({n, s}, 16, 1.0, true);
    backward(u_softmax_xent(z, t));
    checks.push_back({"u_softmax_xent grad", sd(z.grad()), kClosed});
  }
  const double alphas[] = {0.25, 0.5, 1.0, 2.0, 4.0};
  for (double a : alphas) {
    const Tensor x = randn({1 << 20}, 17), g = randn({1 << 20}, 18);
    checks.push_back({fmt("u_gated_silu alpha=%g", a), sd(u_gated_silu(x, g, a).data()), kEmpirical});
  }
  for (std::size_t d : {32, 64, 128}) {
    for (std::size_t s : {64, 256, 1024}) {
      const std::size_t bh = (std::size_t{1} << 20) / (s * d);
      const Tensor q = randn({1, bh, s, d}, 19), k = randn({1, bh, s, d}, 20), v = randn({1, bh, s, d}, 21);
      for (double a : alphas) {
        checks.push_back({fmt("u_attention alpha=%g d=%zu s=%zu", a, d, s), sd(u_attention(q, k, v, a).data()),
                          kEmpirical});
      }
    }
  }

  std::size_t bad = 0;
  std::string worst, failed;
  double worst_rel = 0.0;
  for (const Check& c : checks) {
    const double err = std::fabs(c.value - 1.0);
    if (err / c.tol > worst_rel) {
      worst_rel = err / c.tol;
      worst = fmt("%s std %.4f", c.what.c_str(), c.value);
    }
    if (!(err < c.tol)) {
      ++bad;
      failed += "; " + fmt("%s std %.4f", c.what.c_str(), c.value);
    }
  }
  return {bad == 0, fmt("%zu/%zu checks outside tolerance; closest to its bound: %s", bad, checks.size(),
                        worst.c_str()) + failed};
}

// ---- 3 ---------------------------------------------------------------------

Outcome lemma_equivalence() {
  const LemmaCheckResult r = lemma_f1_trials(8, 20, 64, 0x1E77A);
  return {r.max_layer_deviation < 1e-6 && r.final_deviation < 1e-6,
          fmt("20 networks: max layer deviation %.2e, final deviation %.2e", r.max_layer_deviation,
              r.final_deviation)};
}

// ---- 4 ---------------------------------------------------------------------

TokenStream corpus(std::size_t bytes, std::uint64_t seed) {
  TokenStream s;
  for (unsigned char c : synthetic_corpus(bytes, seed)) s.ids.push_back(c);
  s.source = "synthetic";
  return s;
}

Outcome abc_symmetry() {
  TransformerConfig c;
  c.width = 64;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.seq_len = 64;
  c.scheme.kind = SchemeKind::mup;
  c.scheme.base_width = 64;
  c.scheme.base_depth = c.depth();
  c.scheme.hps.eta = std::exp2(-7.0);
  TrainConfig tc;
  tc.steps = 50;
  tc.warmup_steps = 5;
  tc.batch = 8;
  tc.eval_batches = 1;
  const TokenStream data = corpus(1 << 19, 4);
  const AbcCheckResult r = abc_check(c, 2.0, data, tc, 4);
  tc.adam.eps = 1e-20;
  const AbcCheckResult tiny = abc_check(c, 2.0, data, tc, 4);
  return {r.max_relative_deviation < 1e-5,
          fmt("max relative loss deviation %.2e at Adam eps 1e-8 (%.2e at eps 1e-20)", r.max_relative_deviation,
              tiny.max_relative_deviation)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome gradient_scaling() {
  TransformerConfig c;
  c.width = 64;
  c.n_heads = 2;
  c.n_blocks = 2;
  c.seq_len = 32;
  const TokenStream data = corpus(1 << 16, 5);
  const std::vector<TokenId> tokens(data.ids.begin(), data.ids.begin() + 8 * 33);
  auto grads = [&](bool exact) {
    ScopedEngineSettings s({Precision::fp64, exact});
    const Model m = build_model(c, 5);
    backward(forward_loss(m, tokens, 8));
    std::vector<std::vector<double>> g;
    for (const auto& p : m.params) g.push_back(p.value.grad_or_zeros());
    return g;
  };
  const auto scaled = grads(false), exact = grads(true);
  double worst = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    std::vector<double> ratios;
    for (std::size_t j = 0; j < scaled[i].size(); ++j)
      if (std::fabs(exact[i][j]) > 1e-12) ratios.push_back(scaled[i][j] / exact[i][j]);
    const ScaleStats s = stats(ratios);
    const double cv = s.mean > 0.0 && !ratios.empty() ? s.std / s.mean : std::numeric_limits<double>::infinity();
    worst = std::max(worst, cv);
    bad += !(cv < 1e-6);
  }
  return {bad == 0, fmt("%zu tensors, %zu with ratio std/mean >= 1e-6; worst %.2e", scaled.size(), bad, worst)};
}

// ---- 6 ---------------------------------------------------------------------

Outcome init_rms(const Context& ctx) {
  TransformerConfig c;
  c.width = 256;
  c.n_heads = 4;
  c.d_head = 64;
  c.n_blocks = 2;
  c.seq_len = 128;
  const TokenStream data = corpus(1 << 18, 6);
  const std::vector<TokenId> tokens(data.ids.begin(), data.ids.begin() + 8 * 129);
  const std::vector<RmsRow> rows = rms_report(build_model(c, 6), tokens, 8);

  TransformerConfig mup = c;
  mup.scheme.kind = SchemeKind::mup;
  mup.scheme.base_width = c.width;
  mup.scheme.base_depth = c.depth();
  mup.scheme.hps.sigma_init = 0.25;
  const std::vector<RmsRow> mup_rows = rms_report(build_model(mup, 6), tokens, 8);

  std::ofstream csv(ctx.out / "init_rms_u_mup.csv");
  write_rms_csv(rows, csv);
  std::ofstream mcsv(ctx.out / "init_rms_mup.csv");
  write_rms_csv(mup_rows, mcsv);

  std::string outside;
  std::size_t n_out = 0;
  for (const RmsRow& r : rows) {
    if (r.rms >= 0.5 && r.rms <= 2.0) continue;
    ++n_out;
    outside += fmt(" %s/%s=%.3g", r.tensor.c_str(), r.role.c_str(), r.rms);
  }
  const auto mup_min = std::min_element(mup_rows.begin(), mup_rows.end(),
                                        [](const RmsRow& a, const RmsRow& b) { return a.rms < b.rms; });
  const bool contrast = mup_min->rms < 0.5;
  return {n_out == 0 && contrast,
          fmt("u-muP: %zu/%zu tensors outside [0.5, 2];", n_out, rows.size()) + outside +
              fmt("; muP sigma_init=0.25 min RMS %.3g (%s/%s)", mup_min->rms, mup_min->tensor.c_str(),
                  mup_min->role.c_str())};
}

// ---- 7 ---------------------------------------------------------------------

Outcome transfer_error_properties() {
  const double hand = transfer_error({{1, 2}, {2, 1}});
  Rng rng(7);
  std::size_t sep_bad = 0, shift_bad = 0, relabel_bad = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(6), m = 2 + rng.below(6);
    std::vector<double> f(n), g(m);
    for (auto& v : f) v = rng.normal();
    for (auto& v : g) v = rng.normal();
    LossGrid sep(n, std::vector<double>(m)), any(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        sep[i][j] = f[i] + g[j];
        any[i][j] = rng.normal();
      }
    sep_bad += transfer_error(sep) != 0.0;

    const double base = transfer_error(any);
    LossGrid shifted = any;
    const double k = 10.0 * rng.normal();
    for (auto& row : shifted)
      for (auto& v : row) v += k;
    shift_bad += std::fabs(transfer_error(shifted) - base) > 1e-12 * (1.0 + std::fabs(k));

    std::vector<std::size_t> pr(n), pc(m);
    std::iota(pr.begin(), pr.end(), 0);
    std::iota(pc.begin(), pc.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(pr[i], pr[rng.below(i + 1)]);
    for (std::size_t j = m - 1; j > 0; --j) std::swap(pc[j], pc[rng.below(j + 1)]);
    LossGrid perm(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) perm[i][j] = any[pr[i]][pc[j]];
    relabel_bad += std::fabs(transfer_error(perm) - base) > 1e-12;
  }
  return {hand == 1.0 && sep_bad == 0 && shift_bad == 0 && relabel_bad == 0,
          fmt("hand trace %g; over 200 random grids: %zu separable nonzero, %zu shift and %zu relabel violations",
              hand, sep_bad, shift_bad, relabel_bad)};
}

// ---- 8 ---------------------------------------------------------------------

// Desk-scale setup shared by the LR-transfer arms.
TransformerConfig transfer_base(SchemeKind kind) {
  TransformerConfig c;
  c.width = 64;
  c.n_heads = 2;
  c.d_head = 32;
  c.n_blocks = 2;
  c.seq_len = 64;
  c.scheme.kind = kind;
  return c;
}

TrainConfig transfer_train() {
  TrainConfig tc;
  tc.steps = 200;
  tc.warmup_steps = 50;
  tc.batch = 8;
  tc.eval_batches = 8;
  tc.seed = 8;
  return tc;
}

std::string describe(const LrTransferReport& r) {
  std::string s;
  for (const auto& w : r.widths)
    s += w.all_diverged ? fmt(" w%zu:diverged", w.width) : fmt(" w%zu:2^%g", w.width, std::log2(w.lr));
  return s + fmt(" drift %zu", r.drift_steps);
}

Outcome lr_transfer(const Context& ctx) {
  const TokenStream data = corpus(2200000, 8);
  const std::vector<std::size_t> widths{64, 128, 256};
  auto run = [&](SchemeKind kind, const std::vector<double>& grid, const char* file) {
    const LrTransferReport r =
        lr_transfer_report(widths, grid, 3, lr_cell_objective(transfer_base(kind), transfer_train(), data), 8,
                           ctx.workers);
    std::ofstream csv(ctx.out / file);
    write_lr_transfer_csv(r, csv);
    return r;
  };
  const LrTransferReport u = run(SchemeKind::u_mup, log2_grid(-1, 5), "lr_transfer_u_mup.csv");
  // SP's usable range sits far below u-muP's, so its grid is the same seven
  // octaves shifted down by 2^10.
  const LrTransferReport sp = run(SchemeKind::sp, log2_grid(-11, -5), "lr_transfer_sp.csv");

  const bool u_ok = std::none_of(u.widths.begin(), u.widths.end(), [](auto& w) { return w.all_diverged; }) &&
                    u.drift_steps <= 1;
  // SP "diverges at the widest setting": its narrowest-width optimum
  // diverges when reused at the widest width.
  const LrWidthSummary& narrow = sp.widths.front();
  bool sp_diverges_wide = false;
  if (!narrow.all_diverged) {
    for (const LrCell& cell : sp.cells)
      if (cell.width == widths.back() && cell.lr == narrow.lr) sp_diverges_wide = cell.diverged > 0;
  }
  const bool sp_ok = sp.drift_steps >= u.drift_steps + 1 || sp_diverges_wide;
  return {u_ok && sp_ok, "u-muP" + describe(u) + "; SP" + describe(sp) +
                             (sp_diverges_wide ? " (narrow optimum diverges at widest)" : "")};
}

// ---- 9 ---------------------------------------------------------------------

Outcome embedding_lr_rule() {
  std::size_t bad = 0, n = 0;
  Scheme s;
  for (double eta : {std::exp2(1.5), 1.0, 0.3}) {
    s.hps.eta = eta;
    for (std::size_t w = 128; w <= 4096; w *= 2) {
      ParamTag tag;
      tag.kind = ParamKind::weight_input;
      tag.fan_in = 256;
      tag.fan_out = w;
      ++n;
      bad += lr_for_param(tag, 4, s, eta) != eta / std::sqrt(static_cast<double>(w));
    }
  }
  return {bad == 0, fmt("%zu/%zu (eta, width) pairs differ from eta/sqrt(fan_out)", bad, n)};
}

// ---- 10 --------------------------------------------------------------------

Outcome fp8_training(const Context& ctx) {
  const TokenStream data = corpus(1 << 21, 10);
  TrainConfig tc;
  tc.steps = 500;
  tc.warmup_steps = 100;
  tc.batch = 8;
  tc.eval_batches = 8;
  tc.seed = 10;
  auto run = [&](SchemeKind kind, double eta, PrecisionMode mode) {
    TransformerConfig c = transfer_base(kind);
    c.width = 128;
    c.n_heads = 4;
    if (kind == SchemeKind::mup) {
      c.scheme.base_width = c.width;
      c.scheme.base_depth = c.depth();
      c.scheme.hps.eta_emb_hat = 16.0;
    }
    c.scheme.hps.eta = eta;
    c.precision.mode = mode;
    Model m = build_model(c, 10);
    const RunResult r = train_run(m, data, tc);
    std::ofstream csv(ctx.out / ("fp8_" + to_string(kind) + "_" + to_string(mode) + ".csv"));
    write_metrics_csv(r.metrics, csv);
    return r;
  };
  const RunResult uf = run(SchemeKind::u_mup, 1.0, PrecisionMode::full);
  const RunResult u8 = run(SchemeKind::u_mup, 1.0, PrecisionMode::fp8_primary);
  // Both etas are the full-precision optima of a 2^1 grid at this size.
  const RunResult mf = run(SchemeKind::mup, std::exp2(-4.0), PrecisionMode::full);
  const RunResult m8 = run(SchemeKind::mup, std::exp2(-4.0), PrecisionMode::fp8_primary);
  const double u_rel = std::fabs(u8.final_loss - uf.final_loss) / uf.final_loss;
  const bool u_ok = !uf.diverged && !u8.diverged && u_rel < 0.05;
  const bool mup_ok = !mf.diverged && (m8.diverged || !(m8.final_loss <= 1.1 * mf.final_loss));
  return {u_ok && mup_ok,
          fmt("u-muP full %.4f fp8 %.4f (rel %.2f%%); muP full %.4f fp8 %.4f%s", uf.final_loss, u8.final_loss,
              100 * u_rel, mf.final_loss, m8.final_loss, m8.diverged ? " (diverged)" : "")};
}

// ---- 11 --------------------------------------------------------------------

double max_rel(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(a[i] - b[i]));
    den = std::max(den, std::fabs(a[i]));
  }
  return num / den;
}

Outcome dynamic_rescaling() {
  const Tensor x1 = randn({1024, 256}, 110, 3.0, true), x2 = randn({1024, 256}, 110, 3.0, true);
  const Tensor w1 = randn({256, 128}, 111, 1.0, true), w2 = randn({256, 128}, 111, 1.0, true);
  const Tensor y1 = u_matmul(x1, w1), y2 = dynamic_rescale_matmul(x2, w2);
  backward_randn(y1, 112);
  backward_randn(y2, 112);
  const double dev = std::max({max_rel(y1.data(), y2.data()), max_rel(x1.grad(), x2.grad()),
                               max_rel(w1.grad(), w2.grad())});

  const FloatFormat e4 = make_format("e4m3");
  const Tensor x = randn({1024, 256}, 113, 1000.0);
  const double before = quantize_report(x.data(), e4).overflow_frac;
  MatmulCasts casts;
  casts.input = e4;
  const Tensor y = dynamic_rescale_matmul(x, randn({256, 64}, 114), casts);
  const Node* n = &y.node();
  while (n->op != "cast") n = n->inputs.at(0).get();
  const double after = quantize_report(n->inputs.at(0)->value, e4).overflow_frac;
  return {dev < 1e-6 && before > 0.0 && after == 0.0,
          fmt("max relative deviation %.2e; E4M3 overflow fraction %.3f without rescale, %g with", dev, before,
              after)};
}

// ---- 12 --------------------------------------------------------------------

Outcome independent_search_accounting() {
  const HpGrid grid{{"eta", log2_grid(-3, 3)},
                    {"alpha_res", log2_grid(-2, 2)},
                    {"alpha_attn_softmax", log2_grid(-2, 2)},
                    {"alpha_ffn_act", log2_grid(-1, 1)}};
  const Assignment target{{"eta", 2.0}, {"alpha_res", 0.25}, {"alpha_attn_softmax", 4.0}, {"alpha_ffn_act", 0.5}};
  const std::map<std::string, double> weight{
      {"eta", 1.0}, {"alpha_res", 0.7}, {"alpha_attn_softmax", 0.3}, {"alpha_ffn_act", 1.3}};
  const Objective f = [&](const Assignment& a, std::uint64_t) {
    double loss = 1.0;
    for (const auto& [k, v] : a) loss += weight.at(k) * std::pow(std::log2(v) - std::log2(target.at(k)), 2);
    return TrialOutcome{loss, false};
  };
  // Exhaustive optimum over the grid product.
  Assignment best;
  double best_loss = std::numeric_limits<double>::infinity();
  Assignment cur;
  std::function<void(HpGrid::const_iterator)> walk = [&](HpGrid::const_iterator it) {
    if (it == grid.end()) {
      const double l = f(cur, 0).loss;
      if (l < best_loss) best_loss = l, best = cur;
      return;
    }
    for (double v : it->second) {
      cur[it->first] = v;
      walk(std::next(it));
    }
  };
  walk(grid.begin());

  const IndependentResult r = independent_search(grid, f, 12);
  std::size_t expected_runs = 1;
  for (const auto& [k, v] : grid) expected_runs += v.size();
  return {r.best == best && r.runs.size() == expected_runs,
          fmt("found optimum %s (loss %g vs exhaustive %g); %zu runs, expected %zu",
              r.best == best ? "exactly" : "NOT", r.best_loss, best_loss, r.runs.size(), expected_runs)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uscale acceptance suite"};
  std::vector<int> only;
  std::string out = "acceptance_out";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--out", out, "Directory for CSV artifacts");
  app.add_option("--workers", workers, "Threads for the sweep criteria")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  Context ctx{out, workers};
  fs::create_directories(ctx.out);

  const std::vector<Criterion> criteria{
      {1, "quantizer exactness", 60, quantizer_exactness},
      {2, "unit-scale op suite", 600, unit_scale_suite},
      {3, "residual equivalence lemma", 60, lemma_equivalence},
      {4, "abc-symmetry under Adam", 300, abc_symmetry},
      {5, "gradients under scaling", 300, gradient_scaling},
      {6, "whole-model init RMS", 120, [&] { return init_rms(ctx); }},
      {7, "transfer error properties", 1, transfer_error_properties},
      {8, "desk-scale LR transfer", 7200, [&] { return lr_transfer(ctx); }},
      {9, "embedding LR rule", 1, embedding_lr_rule},
      {10, "emulated FP8 training", 1800, [&] { return fp8_training(ctx); }},
      {11, "dynamic rescaling", 60, dynamic_rescaling},
      {12, "independent search accounting", 60, independent_search_accounting},
  };

  bool ok = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    const bool known = kKnownFailures.count(c.id) > 0;
    const char* verdict = o.pass ? "PASS" : known ? "FAIL (known, see README)" : "FAIL";
    std::cout << fmt("[%2d] %s  %s: ", c.id, verdict, c.name.c_str()) << o.detail << fmt(" [%.1f s]", secs)
              << std::endl;
    ok = ok && (o.pass || known);
  }
  return ok ? 0 : 1;
}
