// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>

#include "uscale/log.hpp"
#include "uscale/numerics.hpp"

namespace uscale {

namespace {

constexpr char kMagic[4] = {'U', 'T', 'O', 'K'};

template <typename T>
T read_le(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& what) {
  if (offset + sizeof(T) > buf.size())
    throw std::runtime_error("token file: truncated " + what + " at offset " + std::to_string(offset));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[offset + i]) << (8 * i));
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double global_grad_norm(const Model& m) {
  double ss = 0.0;
  for (const auto& p : m.params)
    for (double g : p.value.grad()) ss += g * g;
  return std::sqrt(ss);
}

}  // namespace

TokenStream ingest(const std::filesystem::path& path, IngestMode mode) {
  const std::vector<unsigned char> buf = read_all(path);
  TokenStream s;
  s.source = path.string();
  if (mode == IngestMode::text) {
    s.vocab = 256;
    s.ids.assign(buf.begin(), buf.end());
    return s;
  }
  if (buf.size() < 4 || !std::equal(kMagic, kMagic + 4, buf.begin()))
    throw std::runtime_error("token file " + path.string() + ": bad magic at offset 0");
  const auto version = read_le<std::uint32_t>(buf, 4, "version");
  if (version != 1)
    throw std::runtime_error("token file: unsupported version " + std::to_string(version) + " at offset 4");
  s.vocab = read_le<std::uint32_t>(buf, 8, "vocab");
  if (s.vocab < 2) throw std::runtime_error("token file: vocab must be at least 2 (offset 8)");
  const auto width = read_le<std::uint32_t>(buf, 12, "id width");
  if (width != 2 && width != 4)
    throw std::runtime_error("token file: bytes per id must be 2 or 4, got " + std::to_string(width) +
                             " at offset 12");
  const auto count = read_le<std::uint64_t>(buf, 16, "count");
  const std::size_t header = 24;
  if (buf.size() != header + count * width)
    throw std::runtime_error("token file: expected " + std::to_string(count) + " ids of " + std::to_string(width) +
                             " bytes after offset 24, file has " + std::to_string(buf.size()) + " bytes");
  s.ids.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = header + i * width;
    const std::uint32_t id =
        width == 2 ? read_le<std::uint16_t>(buf, off, "id") : read_le<std::uint32_t>(buf, off, "id");
    if (id >= s.vocab)
      throw std::runtime_error("token file: id " + std::to_string(id) + " >= vocab " + std::to_string(s.vocab) +
                               " at offset " + std::to_string(off));
    s.ids[i] = id;
  }
  return s;
}

void write_token_file(const TokenStream& s, const std::filesystem::path& path, std::uint32_t bytes_per_id) {
  if (bytes_per_id != 2 && bytes_per_id != 4) throw std::invalid_argument("token file: bytes per id must be 2 or 4");
  if (bytes_per_id == 2 && s.vocab > 65536) throw std::invalid_argument("token file: vocab too large for 2-byte ids");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, 1);
  write_le<std::uint32_t>(out, s.vocab);
  write_le<std::uint32_t>(out, bytes_per_id);
  write_le<std::uint64_t>(out, s.ids.size());
  for (TokenId id : s.ids) {
    if (id >= s.vocab) throw std::invalid_argument("token file: id outside vocabulary");
    if (bytes_per_id == 2) write_le<std::uint16_t>(out, static_cast<std::uint16_t>(id));
    else write_le<std::uint32_t>(out, id);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_text(const TokenStream& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (TokenId id : s.ids) {
    if (id > 255) throw std::invalid_argument("write_text: id " + std::to_string(id) + " is not a byte");
    out.put(static_cast<char>(id));
  }
}

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t lexicon = 3000;
  std::vector<std::string> words(lexicon);
  for (auto& w : words) {
    const std::size_t len = 2 + rng.below(7);
    for (std::size_t i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
  }
  std::vector<double> cdf(lexicon);
  double acc = 0.0;
  for (std::size_t i = 0; i < lexicon; ++i) cdf[i] = acc += 1.0 / std::pow(static_cast<double>(i + 1), 1.1);
  for (double& c : cdf) c /= acc;
  auto zipf = [&] {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), rng.uniform());
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), lexicon - 1));
  };
  // Each word has a few preferred successors.
  std::vector<std::array<std::size_t, 4>> next(lexicon);
  for (auto& n : next)
    for (auto& x : n) x = zipf();

  std::string out;
  out.reserve(bytes + 16);
  std::size_t word = zipf(), in_sentence = 0;
  bool capital = true;
  while (out.size() < bytes) {
    std::string w = words[word];
    if (capital) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    out += w;
    capital = false;
    ++in_sentence;
    if (in_sentence > 4 && rng.uniform() < 0.12) {
      out += rng.uniform() < 0.15 ? ".\n" : ". ";
      capital = true;
      in_sentence = 0;
    } else if (rng.uniform() < 0.06) {
      out += ", ";
    } else {
      out += ' ';
    }
    word = rng.uniform() < 0.6 ? next[word][rng.below(4)] : zipf();
  }
  out.resize(bytes);
  return out;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("train." + key + ": " + why);
  };
  if (c.steps == 0) fail("steps", "must be positive");
  if (c.warmup_steps > c.steps) fail("warmup_steps", "must not exceed steps");
  if (c.batch == 0) fail("batch", "must be positive");
  if (!(c.peak_lr >= 0.0)) fail("peak_lr", "must be non-negative");
  if (!(c.final_lr_frac > 0.0 && c.final_lr_frac <= 1.0)) fail("final_lr_frac", "must lie in (0, 1]");
  if (c.eval_batches == 0) fail("eval_batches", "must be positive");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(c.adam.eps > 0.0)) fail("eps", "must be positive");
  if (!(c.adam.weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"warmup_steps", c.warmup_steps},
          {"batch", c.batch},
          {"peak_lr", c.peak_lr},
          {"final_lr_frac", c.final_lr_frac},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"eval_batches", c.eval_batches},
          {"rms_every", c.rms_every},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"weight_decay", c.adam.weight_decay},
          {"allow_repeat", c.allow_repeat},
          {"fp32", c.fp32}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument(std::string("train.") + key + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned())
        throw std::invalid_argument(std::string("train.") + key + ": expected a non-negative integer");
    } else if (!v.is_number()) {
      throw std::invalid_argument(std::string("train.") + key + ": expected a number");
    }
    field = v.get<T>();
  };
  get("steps", c.steps);
  get("warmup_steps", c.warmup_steps);
  get("batch", c.batch);
  get("peak_lr", c.peak_lr);
  get("final_lr_frac", c.final_lr_frac);
  get("seed", c.seed);
  get("eval_every", c.eval_every);
  get("eval_batches", c.eval_batches);
  get("rms_every", c.rms_every);
  get("beta1", c.adam.beta1);
  get("beta2", c.adam.beta2);
  get("eps", c.adam.eps);
  get("weight_decay", c.adam.weight_decay);
  get("allow_repeat", c.allow_repeat);
  get("fp32", c.fp32);
  return c;
}

double cosine_schedule(std::size_t step, const TrainConfig& cfg) {
  const double peak = cfg.peak_lr;
  if (step < cfg.warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.steps) return cfg.final_lr_frac * peak;
  const double span = static_cast<double>(cfg.steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  const double floor = cfg.final_lr_frac * peak;
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Split split_stream(const TokenStream& s, double val_frac) {
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw std::invalid_argument("split_stream: fraction must lie in (0, 1)");
  const auto n_val = static_cast<std::size_t>(std::ceil(val_frac * static_cast<double>(s.ids.size())));
  const std::size_t n_train = s.ids.size() - n_val;
  return {std::vector<TokenId>(s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(n_train)),
          std::vector<TokenId>(s.ids.begin() + static_cast<std::ptrdiff_t>(n_train), s.ids.end())};
}

std::vector<TokenId> batch_at(const std::vector<TokenId>& data, std::size_t index, std::size_t batch,
                              std::size_t seq_len, bool allow_repeat) {
  const std::size_t n = batch * (seq_len + 1);
  if (data.size() < n)
    throw std::invalid_argument("insufficient data: need " + std::to_string(n) + " tokens per batch, have " +
                                std::to_string(data.size()));
  const std::size_t per_pass = data.size() / n;
  if (index >= per_pass && !allow_repeat)
    throw std::invalid_argument("insufficient data: batch " + std::to_string(index) + " needs a second pass over " +
                                std::to_string(per_pass) + " batches (set train.allow_repeat)");
  const std::size_t start = (index % per_pass) * n;
  return {data.begin() + static_cast<std::ptrdiff_t>(start), data.begin() + static_cast<std::ptrdiff_t>(start + n)};
}

double evaluate(const Model& m, const std::vector<TokenId>& val, std::size_t batch, std::size_t batches) {
  const std::size_t available = val.size() / (batch * (m.cfg.seq_len + 1));
  if (available == 0) throw std::invalid_argument("insufficient data: validation split is smaller than one batch");
  const std::size_t n = std::min(batches, available);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto tokens = batch_at(val, i, batch, m.cfg.seq_len, false);
    total += forward_loss(m, tokens, batch).item();
  }
  return total / static_cast<double>(n);
}

RunResult train_run(Model& m, const TokenStream& stream, const TrainConfig& cfg_in) {
  validate(cfg_in);
  TrainConfig cfg = cfg_in;
  cfg.peak_lr = m.cfg.scheme.hps.eta;
  if (stream.vocab > m.cfg.vocab)
    throw std::invalid_argument("token stream vocab " + std::to_string(stream.vocab) + " exceeds model vocab " +
                                std::to_string(m.cfg.vocab));
  const Split split = split_stream(stream);
  const std::size_t per_batch = cfg.batch * (m.cfg.seq_len + 1);
  const std::size_t passes_needed = (cfg.steps * per_batch + split.train.size() - 1) / std::max<std::size_t>(split.train.size(), 1);
  if (split.train.size() < per_batch) throw std::invalid_argument("insufficient data: training split is smaller than one batch");
  if (cfg.steps > split.train.size() / per_batch) {
    if (!cfg.allow_repeat)
      throw std::invalid_argument("insufficient data: " + std::to_string(cfg.steps) + " steps need " +
                                  std::to_string(cfg.steps * per_batch) + " training tokens, have " +
                                  std::to_string(split.train.size()) + " (set train.allow_repeat)");
    log_warning("training repeats data: about " + std::to_string(passes_needed) + " passes over the training split");
  }

  ScopedEngineSettings engine({cfg.fp32 ? Precision::fp32 : Precision::fp64, false});
  RunResult res;
  AdamW opt(cfg.adam);
  std::vector<Tensor> params = m.tensors();
  res.init_loss = evaluate(m, split.val, cfg.batch, cfg.eval_batches);
  res.best_loss = res.init_loss;
  res.metrics.push_back({0, "val", res.init_loss, 0.0, 0.0});

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto tokens = batch_at(split.train, step, cfg.batch, m.cfg.seq_len, cfg.allow_repeat);
    for (auto& p : params) p.zero_grad();
    const ForwardResult fr = forward(m, tokens, cfg.batch);
    const double loss = fr.loss.item();
    backward(fr.loss);
    if (cfg.rms_every && step % cfg.rms_every == 0) {
      auto rows = rms_rows(fr, step);
      res.rms.insert(res.rms.end(), rows.begin(), rows.end());
    }
    // The update at step t uses the LR scheduled for t + 1 so that step 0
    // does not waste a zero-LR update.
    const double lr = cosine_schedule(step + 1, cfg);
    res.metrics.push_back({step + 1, "train", loss, lr, global_grad_norm(m)});
    res.steps_run = step + 1;
    if (!std::isfinite(loss)) {
      res.diverged = true;
      break;
    }
    opt.step(params, param_lrs(m, lr));
    const bool last = step + 1 == cfg.steps;
    if (last || (cfg.eval_every && (step + 1) % cfg.eval_every == 0)) {
      const double v = evaluate(m, split.val, cfg.batch, cfg.eval_batches);
      res.metrics.push_back({step + 1, "val", v, lr, 0.0});
      if (std::isfinite(v)) res.best_loss = std::min(res.best_loss, v);
      if (last) res.final_loss = v;
    }
  }
  for (auto& p : params) p.zero_grad();
  if (res.diverged) res.final_loss = std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(res.final_loss) || res.final_loss > 2.0 * res.init_loss) res.diverged = true;
  return res;
}

AbcCheckResult abc_check(const TransformerConfig& cfg, double theta, const TokenStream& stream, TrainConfig tc,
                         std::uint64_t seed) {
  tc.adam.weight_decay = 0.0;
  tc.fp32 = false;
  TransformerConfig shifted = cfg;
  shifted.abc_theta = cfg.abc_theta * theta;
  validate(cfg);
  validate(shifted);
  auto losses = [&](const TransformerConfig& c) {
    Model m = build_model(c, seed);
    std::vector<double> out;
    for (const auto& row : train_run(m, stream, tc).metrics)
      if (row.split == "train") out.push_back(row.loss);
    return out;
  };
  AbcCheckResult r;
  r.losses = losses(cfg);
  r.shifted_losses = losses(shifted);
  if (r.losses.size() != r.shifted_losses.size()) {
    r.max_relative_deviation = std::numeric_limits<double>::infinity();
    return r;
  }
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    const double d = std::fabs(r.losses[i] - r.shifted_losses[i]) / std::fabs(r.losses[i]);
    r.max_relative_deviation = std::max(r.max_relative_deviation, std::isnan(d) ? INFINITY : d);
  }
  return r;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& os) {
  os << "step,split,loss,lr,grad_norm\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.split << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ','
       << format_double(r.grad_norm) << '\n';
}

void write_rms_csv(const std::vector<RmsRow>& rows, std::ostream& os) {
  os << "step,tensor,role,rms,abs_max\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.tensor << ',' << r.role << ',' << format_double(r.rms) << ','
       << format_double(r.abs_max) << '\n';
}

}  // namespace uscale
