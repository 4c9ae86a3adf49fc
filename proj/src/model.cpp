// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "uscale/numerics.hpp"

namespace uscale {

namespace {

const char* kLayerSuffixes[] = {"attn.q", "attn.k", "attn.v", "attn.o", "ffn.gate", "ffn.up", "ffn.down"};

std::string block_name(std::size_t i, const char* suffix) { return "block" + std::to_string(i) + "." + suffix; }

std::string layer_of(const std::string& name) {
  const auto dot = name.find('.');
  return name.rfind("block", 0) == 0 && dot != std::string::npos ? name.substr(dot + 1) : name;
}

bool is_branch_end(const std::string& layer) { return layer == "attn.o" || layer == "ffn.down"; }

class Builder {
 public:
  Builder(const Model& m, std::size_t batch, std::size_t seq, ForwardResult& out)
      : m_(m), cfg_(m.cfg), batch_(batch), seq_(seq), out_(out) {
    for (std::size_t i = 0; i < m.params.size(); ++i) index_[m.params[i].name] = i;
  }

  const NamedParam& p(const std::string& name) const { return m_.params[index_.at(name)]; }

  Tensor linear(const std::string& name, const Tensor& x) {
    const NamedParam& np = p(name);
    const std::string layer = layer_of(name);
    const MatmulCasts casts = casts_for(cfg_.precision, layer);
    Tensor y, weight;
    if (cfg_.scheme.kind == SchemeKind::u_mup) {
      weight = np.value;
      if (np.tag.kind == ParamKind::weight_output) {
        y = u_linear_output(x, np.value, casts);
      } else if (cfg_.precision.dynamic_rescale && cfg_.precision.dynamic_rescale_layers.count(layer)) {
        y = dynamic_rescale_matmul(x, np.value, casts);
      } else {
        y = u_matmul(x, np.value, Constraint::to_output_scale, casts);
      }
    } else {
      weight = np.abc.A == 1.0 ? np.value : scale(np.value, np.abc.A);
      const Tensor xc = casts.input ? cast(x, *casts.input) : x;
      const Tensor wc = casts.weight ? cast(weight, *casts.weight) : weight;
      y = matmul(xc, wc);
      if (casts.grad_output) y = cast_grad(y, *casts.grad_output);
    }
    out_.matmuls.push_back({name, x, weight, y});
    return y;
  }

  // [B*S, H*D] -> [B, H, S, D]
  Tensor heads(const Tensor& x) const {
    return swap_axes12(reshape(x, {batch_, seq_, cfg_.n_heads, cfg_.d_head}));
  }
  // [B, H, S, D] -> [B*S, H*D]
  Tensor merge(const Tensor& x) const { return reshape(swap_axes12(x), {batch_ * seq_, cfg_.width}); }

  Tensor attention(std::size_t i, const Tensor& n) {
    const Tensor q = rope(heads(linear(block_name(i, "attn.q"), n)), cfg_.rope_base);
    const Tensor k = rope(heads(linear(block_name(i, "attn.k"), n)), cfg_.rope_base);
    const Tensor v = heads(linear(block_name(i, "attn.v"), n));
    const HpSet& h = cfg_.scheme.hps;
    Tensor o;
    switch (cfg_.scheme.kind) {
      case SchemeKind::u_mup: o = u_attention(q, k, v, h.alpha_attn_softmax, true); break;
      case SchemeKind::mup:
        o = attention_core(q, k, v, h.alpha_attn / static_cast<double>(cfg_.d_head), true);
        break;
      case SchemeKind::sp:
        o = attention_core(q, k, v, 1.0 / std::sqrt(static_cast<double>(cfg_.d_head)), true);
        break;
    }
    return linear(block_name(i, "attn.o"), merge(o));
  }

  Tensor ffn(std::size_t i, const Tensor& n) {
    const Tensor g = linear(block_name(i, "ffn.gate"), n);
    const Tensor u = linear(block_name(i, "ffn.up"), n);
    const Tensor a = cfg_.scheme.kind == SchemeKind::u_mup ? u_gated_silu(u, g, cfg_.scheme.hps.alpha_ffn_act)
                                                           : gated_silu(u, g, 1.0);
    return linear(block_name(i, "ffn.down"), a);
  }

  Tensor run(std::span<const TokenId> inputs, std::span<const TokenId> targets) {
    const NamedParam& emb = p("embedding");
    Tensor stream = u_embedding_lookup(inputs, emb.value);
    if (cfg_.scheme.kind != SchemeKind::u_mup && emb.abc.A != 1.0) stream = scale(stream, emb.abc.A);
    out_.stream.push_back(stream);

    const double r = cfg_.scheme.kind == SchemeKind::mup
                         ? std::sqrt(static_cast<double>(cfg_.scheme.base_depth) / static_cast<double>(cfg_.depth()))
                         : 1.0;
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
      for (int part = 0; part < 2; ++part) {
        const bool attn = part == 0;
        if (cfg_.scheme.kind == SchemeKind::u_mup) {
          const ResidualBranch& br = m_.schedule.at(2 * i + 1 + static_cast<std::size_t>(part));
          const Tensor n = rmsnorm(branch_input(stream, br.a), cfg_.norm_eps);
          stream = residual_add(attn ? attention(i, n) : ffn(i, n), stream, br.a, br.b);
        } else {
          const Tensor n = rmsnorm(stream, cfg_.norm_eps);
          const Tensor f = attn ? attention(i, n) : ffn(i, n);
          stream = add(stream, r == 1.0 ? f : scale(f, r));
        }
        out_.stream.push_back(stream);
      }
    }
    const Tensor n = rmsnorm(stream, cfg_.norm_eps);
    const Tensor logits = linear("readout", n);
    if (cfg_.scheme.kind == SchemeKind::u_mup)
      return u_softmax_xent(logits, targets, cfg_.scheme.hps.alpha_loss_softmax);
    return softmax_xent(logits, targets, 1.0);
  }

 private:
  const Model& m_;
  const TransformerConfig& cfg_;
  std::size_t batch_, seq_;
  ForwardResult& out_;
  std::unordered_map<std::string, std::size_t> index_;
};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated data file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

nlohmann::json tag_to_json(const ParamTag& t) {
  return {{"kind", to_string(t.kind)},
          {"fan_in", t.fan_in},
          {"fan_out", t.fan_out},
          {"on_residual_branch", t.on_residual_branch},
          {"base_fan_in", t.base_fan_in}};
}

}  // namespace

std::string to_string(PrecisionMode m) {
  switch (m) {
    case PrecisionMode::full: return "full";
    case PrecisionMode::fp8_primary: return "fp8_primary";
    case PrecisionMode::fp8_partial: return "fp8_partial";
  }
  return "?";
}

PrecisionMode precision_mode_from_string(std::string_view s) {
  if (s == "full") return PrecisionMode::full;
  if (s == "fp8_primary") return PrecisionMode::fp8_primary;
  if (s == "fp8_partial") return PrecisionMode::fp8_partial;
  throw std::invalid_argument("unknown precision mode '" + std::string(s) +
                              "' (expected full, fp8_primary or fp8_partial)");
}

MatmulCasts casts_for(const PrecisionPolicy& policy, const std::string& layer) {
  MatmulCasts c;
  if (policy.mode == PrecisionMode::full) return c;
  static const FloatFormat e4m3 = make_format("e4m3"), e5m2 = make_format("e5m2");
  c.weight = e4m3;
  c.grad_output = e4m3;
  if (is_branch_end(layer)) {
    if (policy.mode == PrecisionMode::fp8_primary) c.input = e5m2;
  } else {
    c.input = e4m3;
  }
  return c;
}

std::size_t TransformerConfig::ffn_size_at(std::size_t w) const { return (8 * w + 2) / 3; }

std::size_t TransformerConfig::ffn_size() const { return ffn_hidden ? ffn_hidden : ffn_size_at(width); }

void validate(const TransformerConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("model." + key + ": " + why);
  };
  if (c.width == 0) fail("width", "must be positive");
  if (c.n_blocks == 0) fail("n_blocks", "must be positive");
  if (c.n_heads == 0 || c.d_head == 0) fail("n_heads", "heads and d_head must be positive");
  if (c.n_heads * c.d_head != c.width)
    fail("d_head", "n_heads * d_head = " + std::to_string(c.n_heads * c.d_head) + " does not equal width " +
                       std::to_string(c.width));
  if (c.d_head % 2 != 0) fail("d_head", "must be even for rotary embeddings");
  if (c.vocab < 2) fail("vocab", "must be at least 2");
  if (c.seq_len < 2) fail("seq_len", "must be at least 2");
  if (c.tied_embeddings) fail("tied_embeddings", "tied embeddings are not supported");
  if (!(c.abc_theta > 0.0)) fail("abc_theta", "must be positive");
  if (c.abc_theta != 1.0 && c.scheme.kind == SchemeKind::u_mup)
    fail("abc_theta", "u_mup folds A into its scaled ops; abc shifts apply to mup and sp only");
  if (c.precision.dynamic_rescale && c.scheme.kind != SchemeKind::u_mup)
    fail("precision.dynamic_rescale", "only defined for u_mup");
  for (const auto& l : c.precision.dynamic_rescale_layers) {
    bool known = false;
    for (const char* s : kLayerSuffixes) known = known || l == s;
    if (!known) fail("precision.dynamic_rescale_layers", "unknown layer '" + l + "'");
  }
  try {
    validate_scheme(c.scheme);
  } catch (const std::invalid_argument& e) {
    fail("scheme", e.what());
  }
}

nlohmann::json config_to_json(const TransformerConfig& c) {
  nlohmann::json j{{"width", c.width},
                   {"n_blocks", c.n_blocks},
                   {"n_heads", c.n_heads},
                   {"d_head", c.d_head},
                   {"vocab", c.vocab},
                   {"seq_len", c.seq_len},
                   {"ffn_hidden", c.ffn_hidden},
                   {"tied_embeddings", c.tied_embeddings},
                   {"rope_base", c.rope_base},
                   {"norm_eps", c.norm_eps},
                   {"abc_theta", c.abc_theta}};
  j["scheme"] = scheme_to_json(c.scheme);
  j["precision"] = {{"mode", to_string(c.precision.mode)},
                    {"dynamic_rescale", c.precision.dynamic_rescale},
                    {"dynamic_rescale_layers", c.precision.dynamic_rescale_layers}};
  return j;
}

TransformerConfig config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  auto num = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument(std::string("model.") + key + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned())
        throw std::invalid_argument(std::string("model.") + key + ": expected a non-negative integer");
    } else {
      if (!v.is_number()) throw std::invalid_argument(std::string("model.") + key + ": expected a number");
    }
    field = v.get<T>();
  };
  num("width", c.width);
  num("n_blocks", c.n_blocks);
  num("n_heads", c.n_heads);
  num("d_head", c.d_head);
  num("vocab", c.vocab);
  num("seq_len", c.seq_len);
  num("ffn_hidden", c.ffn_hidden);
  num("tied_embeddings", c.tied_embeddings);
  num("rope_base", c.rope_base);
  num("norm_eps", c.norm_eps);
  num("abc_theta", c.abc_theta);
  // d_head follows width when only the width is given.
  if (j.contains("width") && !j.contains("d_head") && c.n_heads && c.width % c.n_heads == 0)
    c.d_head = c.width / c.n_heads;
  if (j.contains("scheme")) c.scheme = scheme_from_json(j.at("scheme"));
  if (j.contains("precision")) {
    const auto& p = j.at("precision");
    if (p.contains("mode")) c.precision.mode = precision_mode_from_string(p.at("mode").get<std::string>());
    if (p.contains("dynamic_rescale")) c.precision.dynamic_rescale = p.at("dynamic_rescale").get<bool>();
    if (p.contains("dynamic_rescale_layers"))
      c.precision.dynamic_rescale_layers = p.at("dynamic_rescale_layers").get<std::set<std::string>>();
  }
  return c;
}

const NamedParam& Model::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw std::out_of_range("model has no parameter '" + name + "'");
}

std::vector<Tensor> Model::tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

Model build_model(const TransformerConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Model m;
  m.cfg = cfg;
  const std::size_t L = cfg.depth();
  if (cfg.scheme.kind == SchemeKind::u_mup)
    m.schedule = build_schedule(L, cfg.scheme.hps.alpha_res, cfg.scheme.hps.alpha_res_attn_ratio);

  const std::size_t d = cfg.width, ffn = cfg.ffn_size();
  const std::size_t base_w = cfg.scheme.base_width ? cfg.scheme.base_width : d;
  const std::size_t base_ffn = cfg.ffn_hidden ? cfg.ffn_hidden * base_w / d : cfg.ffn_size_at(base_w);
  auto add = [&](std::string name, ParamKind kind, std::size_t fi, std::size_t fo, bool res, std::size_t base_fi) {
    ParamTag t{kind, fi, fo, res, base_fi};
    NamedParam p{std::move(name), t, abc_shift(abc_multipliers(t, L, cfg.scheme), cfg.abc_theta), Tensor()};
    // Each tensor draws from its own stream so adding a layer does not
    // perturb the others.
    Rng rng(derive_seed(seed, m.params.size()));
    Tensor v = init_param(t, L, cfg.scheme, rng);
    if (cfg.abc_theta != 1.0) {
      // B / theta on the same draws.
      std::vector<double> vals(v.data().begin(), v.data().end());
      for (double& x : vals) x /= cfg.abc_theta;
      v = Tensor::from(v.shape(), std::move(vals), true);
    }
    p.value = v;
    m.params.push_back(std::move(p));
  };

  add("embedding", ParamKind::weight_input, cfg.vocab, d, false, cfg.vocab);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    add(block_name(i, "attn.q"), ParamKind::weight_hidden, d, d, true, base_w);
    add(block_name(i, "attn.k"), ParamKind::weight_hidden, d, d, true, base_w);
    add(block_name(i, "attn.v"), ParamKind::weight_hidden, d, d, true, base_w);
    add(block_name(i, "attn.o"), ParamKind::weight_hidden, d, d, true, base_w);
    add(block_name(i, "ffn.gate"), ParamKind::weight_hidden, d, ffn, true, base_w);
    add(block_name(i, "ffn.up"), ParamKind::weight_hidden, d, ffn, true, base_w);
    add(block_name(i, "ffn.down"), ParamKind::weight_hidden, ffn, d, true, base_ffn);
  }
  add("readout", ParamKind::weight_output, d, cfg.vocab, false, base_w);
  return m;
}

std::size_t parameter_count(const TransformerConfig& cfg) {
  const std::size_t d = cfg.width, f = cfg.ffn_size();
  return 2 * cfg.vocab * d + cfg.n_blocks * (4 * d * d + 3 * d * f);
}

namespace {

// LR of `p` per unit of scheduled LR.
double param_lrs_single(const Model& m, const NamedParam& p) {
  double mult = 1.0;
  const auto it = m.cfg.scheme.hps.lr_multipliers.find(p.name);
  if (it != m.cfg.scheme.hps.lr_multipliers.end()) mult = it->second;
  Scheme unit = m.cfg.scheme;
  unit.hps.eta = 1.0;
  return abc_shift(abc_multipliers(p.tag, m.cfg.depth(), unit), m.cfg.abc_theta).C * mult;
}

}  // namespace

std::vector<double> param_lrs(const Model& m, double step_lr) {
  std::vector<double> out;
  out.reserve(m.params.size());
  for (const auto& p : m.params) out.push_back(step_lr * param_lrs_single(m, p));
  return out;
}

ForwardResult forward(const Model& m, std::span<const TokenId> tokens, std::size_t batch) {
  const std::size_t seq = m.cfg.seq_len;
  if (batch == 0 || tokens.size() != batch * (seq + 1))
    throw std::invalid_argument("forward: expected " + std::to_string(batch) + " rows of " +
                                std::to_string(seq + 1) + " tokens, got " + std::to_string(tokens.size()));
  std::vector<TokenId> inputs, targets;
  inputs.reserve(batch * seq);
  targets.reserve(batch * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s <= seq; ++s) {
      const TokenId t = tokens[b * (seq + 1) + s];
      if (t >= m.cfg.vocab)
        throw std::invalid_argument("forward: token id " + std::to_string(t) + " at position " +
                                    std::to_string(b * (seq + 1) + s) + " is outside the vocabulary");
      if (s < seq) inputs.push_back(t);
      if (s > 0) targets.push_back(t);
    }
  }
  ForwardResult r;
  Builder builder(m, batch, seq, r);
  r.loss = builder.run(inputs, targets);
  return r;
}

Tensor forward_loss(const Model& m, std::span<const TokenId> tokens, std::size_t batch) {
  return forward(m, tokens, batch).loss;
}

std::vector<RmsRow> rms_rows(const ForwardResult& r, std::size_t step) {
  std::vector<RmsRow> rows;
  for (const auto& mm : r.matmuls) {
    const ScaleStats in = stats(mm.input.data()), w = stats(mm.weight.data());
    const std::vector<double> g = mm.output.grad_or_zeros();
    const ScaleStats go = stats(g);
    rows.push_back({step, mm.name, "input", in.rms, in.abs_max});
    rows.push_back({step, mm.name, "weight", w.rms, w.abs_max});
    rows.push_back({step, mm.name, "grad_out", go.rms, go.abs_max});
  }
  return rows;
}

std::vector<RmsRow> rms_report(const Model& m, std::span<const TokenId> tokens, std::size_t batch,
                               std::size_t step) {
  for (const auto& p : m.params) p.value.zero_grad();
  const ForwardResult r = forward(m, tokens, batch);
  backward(r.loss);
  auto rows = rms_rows(r, step);
  for (const auto& p : m.params) p.value.zero_grad();
  return rows;
}

GraphAudit audit_graph(const Tensor& loss) {
  GraphAudit a;
  for (Node* n : topo_order(loss)) {
    ++a.op_counts[n->op];
    if (n->op == "attention") a.multiplier_sites.emplace_back(n->op, n->attr("logit_scale"));
    if (n->op == "gated_silu" || n->op == "softmax_xent") a.multiplier_sites.emplace_back(n->op, n->attr("alpha"));
    if (n->op == "rmsnorm")
      for (const auto& in : n->inputs)
        if (in->op == "scale") ++a.scales_into_homogeneous;
  }
  return a;
}

void save_checkpoint(const Model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "checkpoint.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + (dir / "checkpoint.bin").string());
  nlohmann::json manifest;
  manifest["format"] = "uscale-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = config_to_json(m.cfg);
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : m.params) {
    manifest["tensors"].push_back(
        {{"name", p.name}, {"shape", p.value.shape()}, {"tag", tag_to_json(p.tag)}, {"offset", offset}});
    for (double v : p.value.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      write_u64(bin, bits);
    }
    offset += 8 * p.value.numel();
  }
  if (!bin) throw std::runtime_error("checkpoint: write failed");
  std::ofstream js(dir / "checkpoint.json");
  js << manifest.dump(2) << '\n';
  if (!js) throw std::runtime_error("checkpoint: cannot write manifest");
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "checkpoint.json");
  if (!js) throw std::runtime_error("checkpoint: cannot read " + (dir / "checkpoint.json").string());
  const nlohmann::json manifest = nlohmann::json::parse(js);
  Model m = build_model(config_from_json(manifest.at("config")), 0);
  std::ifstream bin(dir / "checkpoint.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot read " + (dir / "checkpoint.bin").string());
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != m.params.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    NamedParam& p = m.params[i];
    if (tensors[i].at("name") != p.name || tensors[i].at("shape").get<Shape>() != p.value.shape())
      throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " does not match the config");
    bin.seekg(static_cast<std::streamoff>(tensors[i].at("offset").get<std::uint64_t>()));
    for (double& v : p.value.mutable_data()) {
      const std::uint64_t bits = read_u64(bin);
      std::memcpy(&v, &bits, 8);
    }
  }
  return m;
}

nlohmann::json param_report(const Model& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : m.params) {
    nlohmann::json row = param_entry_json(p.name, p.tag, m.cfg.depth(), m.cfg.scheme);
    row["A"] = p.abc.A;
    row["B"] = p.abc.B;
    row["C"] = p.abc.C;
    row["lr_multiplier"] = param_lrs_single(m, p);
    row["shape"] = p.value.shape();
    rows.push_back(row);
  }
  return {{"scheme", scheme_to_json(m.cfg.scheme)}, {"depth", m.cfg.depth()}, {"params", rows}};
}

}  // namespace uscale
