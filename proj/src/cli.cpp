// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "uscale/log.hpp"
#include "uscale/numerics.hpp"
#include "uscale/residual.hpp"

namespace uscale {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Allowed keys per object path; "*" marks objects with free-form keys.
const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"", {"model", "train", "data", "sweep", "seed"}},
      {"model",
       {"width", "n_blocks", "n_heads", "d_head", "vocab", "seq_len", "ffn_hidden", "tied_embeddings", "rope_base",
        "norm_eps", "abc_theta", "scheme", "precision"}},
      {"model.scheme", {"kind", "hps", "lr_multipliers", "base_width", "base_depth"}},
      {"model.scheme.hps", {"*"}},
      {"model.scheme.lr_multipliers", {"*"}},
      {"model.precision", {"mode", "dynamic_rescale", "dynamic_rescale_layers"}},
      {"train",
       {"steps", "warmup_steps", "batch", "peak_lr", "final_lr_frac", "seed", "eval_every", "eval_batches",
        "rms_every", "beta1", "beta2", "eps", "weight_decay", "allow_repeat", "fp32"}},
      {"data", {"path", "mode", "synthetic_bytes", "synthetic_seed"}},
      {"sweep", {"strategy", "samples", "grid", "widths", "lr_grid", "replicas", "pairs"}},
      {"sweep.grid", {"*"}},
  };
  return s;
}

void check_keys(const json& j, const std::string& path) {
  const auto it = schema().find(path);
  if (it == schema().end() || it->second.count("*")) return;
  if (!j.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    const std::string child = path.empty() ? k : path + "." + k;
    if (!it->second.count(k)) throw ConfigError(child + ": unknown key");
    if (schema().count(child)) check_keys(v, child);
  }
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key + ": wrong type");
  }
}

// Rethrows library validation errors as ConfigError.
template <typename F>
auto as_config_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

template <typename Writer>
void write_csv(const fs::path& p, Writer&& w) {
  std::ostringstream os;
  w(os);
  write_file(p, os.str());
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string out;
};

RunConfig load_config(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream f(c.config_path);
    if (!f) throw ConfigError("--config: cannot read " + c.config_path);
    try {
      j = json::parse(f);
    } catch (const json::parse_error& e) {
      throw ConfigError("--config: " + std::string(e.what()));
    }
  }
  for (const auto& s : c.sets) apply_override(j, s);
  if (c.seed) j["seed"] = *c.seed;
  return parse_run_config(j);
}

fs::path out_dir(const Common& c) {
  std::string dir = c.out;
  if (dir.empty()) {
    const char* env = std::getenv("USCALE_OUT");
    dir = env && *env ? env : "uscale_out";
  }
  fs::create_directories(dir);
  return dir;
}

void write_effective_config(const fs::path& dir, const RunConfig& rc) {
  write_file(dir / "config.json", run_config_to_json(rc).dump(2) + "\n");
}

HpGrid effective_grid(const RunConfig& rc) {
  HpGrid g = rc.sweep.grid.empty() ? default_grid(rc.model.scheme.kind) : rc.sweep.grid;
  validate_grid(g);
  Scheme probe = rc.model.scheme;
  for (const auto& [name, values] : g) set_hp(probe, name, values.front());
  return g;
}

std::vector<double> effective_lr_grid(const RunConfig& rc) {
  std::vector<double> g = rc.sweep.lr_grid.empty() ? log2_grid(-1, 5) : rc.sweep.lr_grid;
  validate_grid({{"lr_grid", g}});
  return g;
}

int cmd_train(const Common& c, std::ostream& out) {
  const RunConfig rc = load_config(c);
  const fs::path dir = out_dir(c);
  const TokenStream data = load_data(rc.data);
  Model m = build_model(rc.model, rc.seed);
  TrainConfig tc = rc.train;
  if (tc.rms_every == 0) tc.rms_every = std::max<std::size_t>(1, tc.steps / 10);
  const RunResult r = train_run(m, data, tc);
  write_effective_config(dir, rc);
  write_csv(dir / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(r.metrics, os); });
  write_csv(dir / "rms.csv", [&](std::ostream& os) { write_rms_csv(r.rms, os); });
  save_checkpoint(m, dir / "checkpoint");
  const json summary{{"init_loss", r.init_loss},   {"final_loss", r.final_loss}, {"best_loss", r.best_loss},
                     {"diverged", r.diverged},     {"steps_run", r.steps_run}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  out << "init_loss " << format_double(r.init_loss) << "\nfinal_loss " << format_double(r.final_loss) << "\n";
  if (r.diverged) {
    out << "diverged\n";
    return 2;
  }
  return 0;
}

int cmd_sweep(const Common& c, std::ostream& out) {
  const RunConfig rc = load_config(c);
  const HpGrid grid = as_config_error([&] { return effective_grid(rc); });
  if (rc.sweep.strategy != "independent" && rc.sweep.strategy != "random")
    throw ConfigError("sweep.strategy: expected independent or random");
  const fs::path dir = out_dir(c);
  const TokenStream data = load_data(rc.data);
  const Objective f = training_objective(rc.model, rc.train, data);
  std::vector<SweepRun> runs;
  Assignment best;
  double best_loss = 0.0;
  if (rc.sweep.strategy == "independent") {
    const IndependentResult r = independent_search(grid, f, rc.seed, c.workers);
    runs = r.runs;
    best = r.best;
    best_loss = r.best_loss;
  } else {
    runs = random_search(grid, rc.sweep.samples, f, rc.seed, c.workers);
    best = runs.front().hps;
    best_loss = runs.front().ranking_loss();
  }
  write_effective_config(dir, rc);
  write_csv(dir / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(runs, os); });
  write_file(dir / "best.json", json{{"hps", best}, {"loss", best_loss}, {"runs", runs.size()}}.dump(2) + "\n");
  out << "runs " << runs.size() << "\nbest_loss " << format_double(best_loss) << "\nbest " << json(best).dump()
      << "\n";
  return 0;
}

int cmd_transfer_error(const Common& c, const std::vector<std::string>& grid_files, std::ostream& out) {
  std::map<std::pair<std::string, std::string>, LossGrid> grids;
  const fs::path dir = out_dir(c);
  if (!grid_files.empty()) {
    for (const auto& p : grid_files) {
      std::ifstream f(p);
      if (!f) throw ConfigError("--grid: cannot read " + p);
      LossGrid g = as_config_error([&] { return read_loss_grid_csv(f); });
      grids[{fs::path(p).stem().string(), ""}] = std::move(g);
    }
  } else {
    const RunConfig rc = load_config(c);
    if (rc.sweep.pairs.empty()) throw ConfigError("sweep.pairs: give HP pairs or pass --grid files");
    const HpGrid grid = as_config_error([&] { return effective_grid(rc); });
    for (const auto& [a, b] : rc.sweep.pairs)
      if (!grid.count(a) || !grid.count(b)) throw ConfigError("sweep.pairs: no grid for " + a + " or " + b);
    const TokenStream data = load_data(rc.data);
    const Objective f = training_objective(rc.model, rc.train, data);
    for (const auto& [fixed, transfer] : rc.sweep.pairs) {
      std::vector<Job> jobs;
      for (double fv : grid.at(fixed))
        for (double tv : grid.at(transfer)) jobs.push_back({{{fixed, fv}, {transfer, tv}}, rc.seed});
      const auto res = run_jobs(jobs, f, c.workers);
      LossGrid g(grid.at(fixed).size(), std::vector<double>(grid.at(transfer).size()));
      for (std::size_t i = 0; i < res.size(); ++i) {
        const double l = res[i].diverged || !std::isfinite(res[i].loss) ? 1e300 : res[i].loss;
        g[i / g.front().size()][i % g.front().size()] = l;
      }
      write_csv(dir / ("grid_" + fixed + "_" + transfer + ".csv"), [&](std::ostream& os) { write_loss_grid_csv(g, os); });
      grids[{fixed, transfer}] = std::move(g);
    }
    write_effective_config(dir, rc);
  }
  const json summary = as_config_error([&] { return transfer_error_summary(grids); });
  write_file(dir / "transfer_error.json", summary.dump(2) + "\n");
  for (const auto& p : summary["pairs"])
    out << p["fixed"].get<std::string>() << (p["transfer"].get<std::string>().empty() ? "" : " -> ")
        << p["transfer"].get<std::string>() << " " << format_double(p["transfer_error"].get<double>()) << "\n";
  out << "mean_transfer_error " << format_double(summary["mean_transfer_error"].get<double>()) << "\n";
  return 0;
}

int cmd_lr_transfer(const Common& c, std::ostream& out) {
  const RunConfig rc = load_config(c);
  const std::vector<double> lrs = as_config_error([&] { return effective_lr_grid(rc); });
  as_config_error([&] {
    for (std::size_t w : rc.sweep.widths) validate(at_width(rc.model, w));
    return 0;
  });
  const fs::path dir = out_dir(c);
  const TokenStream data = load_data(rc.data);
  const LrTransferReport rep = lr_transfer_report(rc.sweep.widths, lrs, rc.sweep.replicas,
                                                  lr_cell_objective(rc.model, rc.train, data), rc.seed, c.workers);
  write_effective_config(dir, rc);
  write_csv(dir / "lr_transfer.csv", [&](std::ostream& os) { write_lr_transfer_csv(rep, os); });
  write_file(dir / "lr_transfer.json", lr_transfer_json(rep).dump(2) + "\n");
  for (const auto& w : rep.widths) {
    out << "width " << w.width << ' ';
    if (w.all_diverged) out << "all diverged\n";
    else out << "argmin_lr " << format_double(w.lr) << " loss " << format_double(w.loss) << "\n";
  }
  out << "drift_steps " << rep.drift_steps << "\n";
  return 0;
}

int cmd_rms_report(const Common& c, const std::string& checkpoint, std::ostream& out) {
  const RunConfig rc = load_config(c);
  const fs::path dir = out_dir(c);
  const Model m = checkpoint.empty() ? build_model(rc.model, rc.seed) : load_checkpoint(checkpoint);
  const TokenStream data = load_data(rc.data);
  const Split sp = split_stream(data);
  const auto tokens = batch_at(sp.val, 0, rc.train.batch, m.cfg.seq_len, false);
  const auto rows = rms_report(m, tokens, rc.train.batch);
  write_csv(dir / "rms.csv", [&](std::ostream& os) { write_rms_csv(rows, os); });
  std::size_t outside = 0;
  for (const auto& r : rows) outside += r.rms < 0.5 || r.rms > 2.0;
  out << "tensors " << rows.size() << "\noutside_0.5_2 " << outside << "\n";
  return 0;
}

int cmd_quantize_report(const Common& c, const std::vector<std::string>& formats, double std_dev, std::size_t count,
                        const std::string& input, bool rescale, std::ostream& out) {
  std::vector<FloatFormat> fmts;
  for (const auto& f : formats) fmts.push_back(as_config_error([&] { return make_format(f); }));
  if (!(std_dev > 0.0)) throw ConfigError("--std: must be positive");
  std::vector<double> xs;
  if (!input.empty()) {
    std::ifstream f(input);
    if (!f) throw ConfigError("--input: cannot read " + input);
    std::string tok;
    while (f >> tok) {
      for (char& ch : tok)
        if (ch == ',') ch = ' ';
      std::istringstream ts(tok);
      double v;
      while (ts >> v) xs.push_back(v);
    }
    if (xs.empty()) throw ConfigError("--input: no numbers in " + input);
  } else {
    if (count == 0) throw ConfigError("--count: must be positive");
    Rng rng(c.seed.value_or(0));
    xs.resize(count);
    for (double& x : xs) x = std_dev * rng.normal();
  }
  if (rescale) {
    const double sd = stats(xs).std;
    if (sd > 0.0)
      for (double& x : xs) x /= sd;
  }
  const fs::path dir = out_dir(c);
  std::ostringstream os;
  os << quantize_report_header() << "\n";
  for (const auto& f : fmts) os << to_csv_row(quantize_report(xs, f)) << "\n";
  write_file(dir / "quantize.csv", os.str());
  out << os.str();
  return 0;
}

int cmd_param_report(const Common& c, std::ostream& out) {
  const RunConfig rc = load_config(c);
  const fs::path dir = out_dir(c);
  const Model m = build_model(rc.model, rc.seed);
  const json j = param_report(m);
  write_file(dir / "param_report.json", j.dump(2) + "\n");
  out << j.dump(2) << "\n";
  return 0;
}

int cmd_lemma_check(const Common& c, std::size_t depth, std::size_t trials, std::size_t width, std::ostream& out) {
  const LemmaCheckResult r =
      as_config_error([&] { return lemma_f1_trials(depth, trials, width, c.seed.value_or(0)); });
  out << "max_layer_deviation " << format_double(r.max_layer_deviation) << "\nfinal_deviation "
      << format_double(r.final_deviation) << "\n";
  return r.max_layer_deviation < 1e-6 && r.final_deviation < 1e-6 ? 0 : 2;
}

int cmd_abc_check(const Common& c, double theta, std::size_t steps, std::ostream& out) {
  RunConfig rc = load_config(c);
  if (rc.model.scheme.kind == SchemeKind::u_mup)
    throw ConfigError("model.scheme.kind: abc-check needs mup or sp");
  if (!(theta > 0.0)) throw ConfigError("--theta: must be positive");
  if (steps == 0) throw ConfigError("--steps: must be positive");
  rc.train.steps = steps;
  rc.train.warmup_steps = std::min(rc.train.warmup_steps, steps);
  as_config_error([&] {
    validate(rc.train);
    TransformerConfig shifted = rc.model;
    shifted.abc_theta *= theta;
    validate(shifted);
    return 0;
  });
  const TokenStream data = load_data(rc.data);
  const AbcCheckResult r = abc_check(rc.model, theta, data, rc.train, rc.seed);
  const fs::path dir = out_dir(c);
  std::ostringstream os;
  os << "step,loss,shifted_loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i)
    os << i + 1 << ',' << format_double(r.losses[i]) << ',' << format_double(r.shifted_losses[i]) << '\n';
  write_file(dir / "abc_check.csv", os.str());
  out << "eps " << format_double(rc.train.adam.eps) << "\nmax_relative_deviation "
      << format_double(r.max_relative_deviation) << "\n";
  return r.max_relative_deviation < 1e-5 ? 0 : 2;
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected KEY=VALUE, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: empty key segment in '" + path + "'");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("--set " + path + ": '" + key + "' is under a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, "");
  RunConfig rc;
  if (j.contains("seed")) rc.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
  rc.model = as_config_error([&] { return config_from_json(j.value("model", json::object())); });
  if (rc.model.scheme.kind == SchemeKind::mup) {
    if (rc.model.scheme.base_width == 0) rc.model.scheme.base_width = rc.model.width;
    if (rc.model.scheme.base_depth == 0) rc.model.scheme.base_depth = rc.model.depth();
  }
  as_config_error([&] {
    validate(rc.model);
    return 0;
  });
  rc.train = as_config_error([&] { return train_config_from_json(j.value("train", json::object())); });
  as_config_error([&] {
    validate(rc.train);
    return 0;
  });
  rc.train.seed = rc.seed;

  const json d = j.value("data", json::object());
  if (d.contains("path")) rc.data.path = get_as<std::string>(d.at("path"), "data.path");
  if (d.contains("mode")) {
    const auto mode = get_as<std::string>(d.at("mode"), "data.mode");
    if (mode == "text") rc.data.mode = IngestMode::text;
    else if (mode == "binary") rc.data.mode = IngestMode::binary;
    else throw ConfigError("data.mode: expected text or binary");
  }
  if (d.contains("synthetic_bytes"))
    rc.data.synthetic_bytes = get_as<std::size_t>(d.at("synthetic_bytes"), "data.synthetic_bytes");
  if (d.contains("synthetic_seed"))
    rc.data.synthetic_seed = get_as<std::uint64_t>(d.at("synthetic_seed"), "data.synthetic_seed");

  const json s = j.value("sweep", json::object());
  if (s.contains("strategy")) rc.sweep.strategy = get_as<std::string>(s.at("strategy"), "sweep.strategy");
  if (s.contains("samples")) rc.sweep.samples = get_as<std::size_t>(s.at("samples"), "sweep.samples");
  if (s.contains("grid")) rc.sweep.grid = get_as<HpGrid>(s.at("grid"), "sweep.grid");
  if (s.contains("widths")) rc.sweep.widths = get_as<std::vector<std::size_t>>(s.at("widths"), "sweep.widths");
  if (s.contains("lr_grid")) rc.sweep.lr_grid = get_as<std::vector<double>>(s.at("lr_grid"), "sweep.lr_grid");
  if (s.contains("replicas")) rc.sweep.replicas = get_as<std::size_t>(s.at("replicas"), "sweep.replicas");
  if (s.contains("pairs"))
    rc.sweep.pairs = get_as<std::vector<std::pair<std::string, std::string>>>(s.at("pairs"), "sweep.pairs");
  if (rc.sweep.replicas == 0) throw ConfigError("sweep.replicas: must be positive");
  if (rc.sweep.samples == 0) throw ConfigError("sweep.samples: must be positive");
  if (rc.sweep.widths.empty()) throw ConfigError("sweep.widths: at least one width needed");
  if (!rc.sweep.grid.empty()) as_config_error([&] {
      validate_grid(rc.sweep.grid);
      return 0;
    });
  return rc;
}

json run_config_to_json(const RunConfig& c) {
  json sweep{{"strategy", c.sweep.strategy}, {"samples", c.sweep.samples}, {"widths", c.sweep.widths},
             {"lr_grid", c.sweep.lr_grid},   {"replicas", c.sweep.replicas}, {"pairs", c.sweep.pairs}};
  sweep["grid"] = c.sweep.grid.empty() ? json::object() : json(c.sweep.grid);
  return {{"seed", c.seed},
          {"model", config_to_json(c.model)},
          {"train", train_config_to_json(c.train)},
          {"data",
           {{"path", c.data.path},
            {"mode", c.data.mode == IngestMode::text ? "text" : "binary"},
            {"synthetic_bytes", c.data.synthetic_bytes},
            {"synthetic_seed", c.data.synthetic_seed}}},
          {"sweep", sweep}};
}

TokenStream load_data(const DataConfig& d) {
  if (!d.path.empty()) return ingest(d.path, d.mode);
  if (d.synthetic_bytes == 0) throw ConfigError("data.synthetic_bytes: must be positive without data.path");
  const std::string text = synthetic_corpus(d.synthetic_bytes, d.synthetic_seed);
  TokenStream s;
  s.source = "synthetic";
  s.ids.reserve(text.size());
  for (unsigned char ch : text) s.ids.push_back(ch);
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"uscale: unit-scaled maximal update parametrization experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "JSON config file");
  app.add_option("--set", common.sets, "Override a config leaf, KEY=VALUE (repeatable)");
  app.add_option("--seed", common.seed, "Run seed");
  app.add_option("--workers", common.workers, "Parallel runs for sweep verbs")->check(CLI::PositiveNumber);
  app.add_option("--out", common.out, "Output directory (default $USCALE_OUT or ./uscale_out)");

  auto* train = app.add_subcommand("train", "Train one model; writes metrics.csv, rms.csv and a checkpoint");
  auto* sweep = app.add_subcommand("sweep", "Independent or random HP search");
  auto* terr = app.add_subcommand("transfer-error", "Transfer error of 2-D loss grids");
  std::vector<std::string> grid_files;
  terr->add_option("--grid", grid_files, "Loss grid CSV (rows: fixed HP, columns: transferred HP)");
  auto* lrt = app.add_subcommand("lr-transfer", "LR sweep across widths");
  auto* rms = app.add_subcommand("rms-report", "Per-matmul RMS of inputs, weights and output grads");
  std::string checkpoint;
  rms->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: a fresh model)");
  auto* quant = app.add_subcommand("quantize-report", "Underflow/overflow of casting Gaussian or given values");
  std::vector<std::string> formats{"e4m3", "e5m2"};
  double std_dev = 1.0;
  std::size_t count = 1 << 16;
  std::string input;
  bool rescale = false;
  quant->add_option("--format", formats, "Formats to report");
  quant->add_option("--std", std_dev, "Std of the Gaussian input");
  quant->add_option("--count", count, "Gaussian sample count");
  quant->add_option("--input", input, "Whitespace or comma separated values instead of a Gaussian");
  quant->add_flag("--dynamic-rescale", rescale, "Divide the values by their std before casting");
  auto* params = app.add_subcommand("param-report", "Per-parameter abc multipliers and LR multipliers");
  auto* lemma = app.add_subcommand("lemma-check", "Residual-scheme equivalence on random pre-norm networks");
  std::size_t depth = 8, trials = 20, width = 64;
  lemma->add_option("--depth", depth, "Maximum depth");
  lemma->add_option("--trials", trials, "Random networks");
  lemma->add_option("--width", width, "Probe width");
  auto* abc = app.add_subcommand("abc-check", "Train a model and its abc-shifted twin and compare losses");
  double theta = 2.0;
  std::size_t steps = 50;
  abc->add_option("--theta", theta, "Shift factor");
  abc->add_option("--steps", steps, "Training steps");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*train) return cmd_train(common, out);
    if (*sweep) return cmd_sweep(common, out);
    if (*terr) return cmd_transfer_error(common, grid_files, out);
    if (*lrt) return cmd_lr_transfer(common, out);
    if (*rms) return cmd_rms_report(common, checkpoint, out);
    if (*quant) return cmd_quantize_report(common, formats, std_dev, count, input, rescale, out);
    if (*params) return cmd_param_report(common, out);
    if (*lemma) return cmd_lemma_check(common, depth, trials, width, out);
    if (*abc) return cmd_abc_check(common, theta, steps, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    // Data-dependent checks (e.g. insufficient data) surface after config validation.
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace uscale
