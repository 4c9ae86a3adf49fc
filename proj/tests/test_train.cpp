// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string_view>
#include <unordered_set>

#include "doctest.h"
#include "uscale/train.hpp"

using namespace uscale;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uscale_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TransformerConfig tiny_model(std::size_t seq = 32) {
  TransformerConfig c;
  c.width = 64;
  c.n_heads = 4;
  c.d_head = 16;
  c.n_blocks = 2;
  c.seq_len = seq;
  return c;
}

TokenStream text_stream(const std::string& text) {
  TokenStream s;
  s.ids.assign(text.begin(), text.end());
  for (auto& id : s.ids) id &= 0xff;
  return s;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("cosine schedule examples") {
  TrainConfig c;
  c.steps = 1000;
  c.warmup_steps = 100;
  c.peak_lr = 2.0;
  CHECK(cosine_schedule(0, c) == 0.0);
  CHECK(cosine_schedule(50, c) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_schedule(100, c) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cosine_schedule(550, c) == doctest::Approx(0.2 + 1.8 * 0.5).epsilon(1e-15));
  CHECK(cosine_schedule(1000, c) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(cosine_schedule(5000, c) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("cosine schedule is continuous") {
  for (auto [steps, warmup] : {std::pair<std::size_t, std::size_t>{100, 10}, {1000, 1}, {37, 36}, {64, 0}}) {
    TrainConfig c;
    c.steps = steps;
    c.warmup_steps = warmup;
    c.peak_lr = 3.0;
    const double w = warmup ? 1.0 / static_cast<double>(warmup) : 0.0;
    const double bound = c.peak_lr * (w + std::numbers::pi / static_cast<double>(steps - warmup));
    for (std::size_t s = 0; s < steps; ++s)
      CHECK(std::fabs(cosine_schedule(s + 1, c) - cosine_schedule(s, c)) <= bound * (1 + 1e-12));
  }
}

TEST_CASE("changing steps keeps warmup and stretches the decay") {
  TrainConfig a, b;
  a.steps = 200;
  b.steps = 400;
  a.warmup_steps = b.warmup_steps = 20;
  for (std::size_t s = 0; s <= 20; ++s) CHECK(cosine_schedule(s, a) == cosine_schedule(s, b));
  CHECK(cosine_schedule(110, a) == doctest::Approx(cosine_schedule(210, b)).epsilon(1e-14));
  CHECK(cosine_schedule(200, a) == doctest::Approx(cosine_schedule(400, b)).epsilon(1e-14));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.warmup_steps = c.steps + 1;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("train.warmup_steps"), std::invalid_argument);
  c = TrainConfig{};
  c.final_lr_frac = 0.0;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("train.final_lr_frac"), std::invalid_argument);
  c.final_lr_frac = 1.0;
  CHECK_NOTHROW(validate(c));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"steps", -3}}), std::invalid_argument);
  const TrainConfig d = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(d) == train_config_to_json(c));
}

TEST_CASE("text ingestion maps bytes") {
  const fs::path dir = temp_dir("text");
  write_bytes(dir / "ab.txt", "ab");
  const TokenStream s = ingest(dir / "ab.txt", IngestMode::text);
  CHECK(s.vocab == 256);
  CHECK(s.ids == std::vector<TokenId>{97, 98});
}

TEST_CASE("text to binary to text round trip") {
  const fs::path dir = temp_dir("roundtrip");
  std::string text = synthetic_corpus(5000, 3);
  text += std::string("\0\xff\x80", 3);
  write_bytes(dir / "in.txt", text);
  const TokenStream s = ingest(dir / "in.txt", IngestMode::text);
  for (std::uint32_t width : {2u, 4u}) {
    write_token_file(s, dir / "tok.bin", width);
    const TokenStream b = ingest(dir / "tok.bin", IngestMode::binary);
    CHECK(b.ids == s.ids);
    CHECK(b.vocab == 256);
    write_text(b, dir / "out.txt");
    std::ifstream in(dir / "out.txt", std::ios::binary);
    const std::string back((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(back == text);
  }
}

TEST_CASE("token file header is bit exact") {
  const fs::path dir = temp_dir("header");
  TokenStream s;
  s.vocab = 300;
  s.ids = {1, 299};
  write_token_file(s, dir / "t.bin", 2);
  std::ifstream in(dir / "t.bin", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string expected("UTOK\x01\0\0\0\x2c\x01\0\0\x02\0\0\0\x02\0\0\0\0\0\0\0\x01\0\x2b\x01", 28);
  CHECK(bytes == expected);
}

TEST_CASE("binary ingestion errors carry offsets") {
  const fs::path dir = temp_dir("errors");
  // vocab 256, one id of 300 as the second id.
  const std::string bad("UTOK\x01\0\0\0\0\x01\0\0\x02\0\0\0\x02\0\0\0\0\0\0\0\x05\0\x2c\x01", 28);
  write_bytes(dir / "bad.bin", bad);
  CHECK_THROWS_WITH(ingest(dir / "bad.bin", IngestMode::binary), doctest::Contains("offset 26"));
  CHECK_THROWS_WITH(ingest(dir / "bad.bin", IngestMode::binary), doctest::Contains("id 300"));
  write_bytes(dir / "magic.bin", "XTOK");
  CHECK_THROWS_WITH(ingest(dir / "magic.bin", IngestMode::binary), doctest::Contains("offset 0"));
  write_bytes(dir / "short.bin", bad.substr(0, 27));
  CHECK_THROWS(ingest(dir / "short.bin", IngestMode::binary));
  CHECK_THROWS(ingest(dir / "missing.bin", IngestMode::text));
}

TEST_CASE("synthetic corpus is deterministic text") {
  const std::string a = synthetic_corpus(20000, 9);
  CHECK(a.size() == 20000);
  CHECK(a == synthetic_corpus(20000, 9));
  CHECK(a != synthetic_corpus(20000, 10));
  for (char ch : a) CHECK((std::isalpha(static_cast<unsigned char>(ch)) || std::string_view(" .,\n").find(ch) != std::string_view::npos));
}

TEST_CASE("validation split is the disjoint tail") {
  TokenStream s;
  Rng rng(5);
  s.ids.resize(40000);
  for (auto& x : s.ids) x = static_cast<TokenId>(rng.below(256));
  const Split sp = split_stream(s);
  CHECK(sp.val.size() == 2000);
  CHECK(sp.train.size() + sp.val.size() == s.ids.size());
  CHECK(std::equal(sp.val.begin(), sp.val.end(), s.ids.end() - 2000));

  const std::size_t seq = 31, batch = 4, n = batch * (seq + 1);
  auto row_hash = [](const std::vector<TokenId>& v, std::size_t off, std::size_t len) {
    std::string key(reinterpret_cast<const char*>(v.data() + off), len * sizeof(TokenId));
    return std::hash<std::string>{}(key);
  };
  std::unordered_set<std::size_t> train_rows;
  for (std::size_t b = 0; b < sp.train.size() / n; ++b) {
    const auto tok = batch_at(sp.train, b, batch, seq, false);
    for (std::size_t r = 0; r < batch; ++r) train_rows.insert(row_hash(tok, r * (seq + 1), seq + 1));
  }
  for (std::size_t b = 0; b < sp.val.size() / n; ++b) {
    const auto tok = batch_at(sp.val, b, batch, seq, false);
    for (std::size_t r = 0; r < batch; ++r) CHECK(train_rows.count(row_hash(tok, r * (seq + 1), seq + 1)) == 0);
  }
}

TEST_CASE("batches are sequential and repetition is opt-in") {
  std::vector<TokenId> data(100);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<TokenId>(i);
  const auto b0 = batch_at(data, 0, 2, 9, false);
  const auto b1 = batch_at(data, 1, 2, 9, false);
  CHECK(b0.front() == 0);
  CHECK(b0.back() == 19);
  CHECK(b1.front() == 20);
  CHECK_THROWS_WITH(batch_at(data, 5, 2, 9, false), doctest::Contains("insufficient data"));
  CHECK(batch_at(data, 5, 2, 9, true) == b0);
  CHECK_THROWS_WITH(batch_at(data, 0, 20, 9, true), doctest::Contains("insufficient data"));
}

TEST_CASE("train_run rejects too little data") {
  Model m = build_model(tiny_model(), 1);
  TrainConfig c;
  c.steps = 50;
  c.warmup_steps = 5;
  c.batch = 4;
  const TokenStream s = text_stream(synthetic_corpus(3000, 1));
  CHECK_THROWS_WITH(train_run(m, s, c), doctest::Contains("insufficient data"));
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  Model m = build_model(tiny_model(), 2);
  m.cfg.scheme.hps.eta = 0.0;
  std::vector<std::vector<double>> before;
  for (const auto& p : m.params) before.emplace_back(p.value.data().begin(), p.value.data().end());
  TrainConfig c;
  c.steps = 10;
  c.warmup_steps = 2;
  c.batch = 4;
  c.adam.weight_decay = 0.0;
  const TokenStream s = text_stream(synthetic_corpus(60000, 2));
  const RunResult r = train_run(m, s, c);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto d = m.params[i].value.data();
    CHECK(std::equal(d.begin(), d.end(), before[i].begin()));
  }
  CHECK(r.final_loss == r.init_loss);
  for (const auto& row : r.metrics)
    if (row.split == "train") CHECK(std::fabs(row.loss - r.init_loss) < 0.1);
}

TEST_CASE("u-mup width 64 smoke run learns") {
  Model m = build_model(tiny_model(), 3);
  TrainConfig c;
  c.steps = 300;
  c.warmup_steps = 30;
  c.batch = 8;
  c.eval_every = 100;
  c.rms_every = 100;
  const TokenStream s = text_stream(synthetic_corpus(120000, 3));
  const RunResult r = train_run(m, s, c);
  CHECK(r.init_loss == doctest::Approx(std::log(256.0)).epsilon(0.05));
  CHECK(r.final_loss < r.init_loss);
  CHECK(r.final_loss < std::log(256.0));
  CHECK_FALSE(r.diverged);
  CHECK(r.steps_run == 300);
  CHECK(r.best_loss <= r.final_loss);
  const std::size_t matmuls = forward(m, batch_at(split_stream(s).val, 0, 1, 32, false), 1).matmuls.size();
  CHECK(r.rms.size() == 3 * 3 * matmuls);
  std::size_t val_rows = 0;
  for (const auto& row : r.metrics) val_rows += row.split == "val";
  CHECK(val_rows == 4);
}

TEST_CASE("same seed gives identical metrics CSV") {
  auto run = [] {
    Model m = build_model(tiny_model(16), 11);
    TrainConfig c;
    c.steps = 20;
    c.warmup_steps = 4;
    c.batch = 4;
    c.eval_every = 10;
    const TokenStream s = text_stream(synthetic_corpus(40000, 4));
    std::ostringstream os;
    write_metrics_csv(train_run(m, s, c).metrics, os);
    return os.str();
  };
  const std::string a = run();
  CHECK(a.rfind("step,split,loss,lr,grad_norm\n", 0) == 0);
  CHECK(a == run());
}

TEST_CASE("a repeated token corpus is memorized") {
  // A cycle of distinct tokens: every next token is determined by the current one.
  std::string text;
  while (text.size() < 100000) text += "abcdefghij";
  Model m = build_model(tiny_model(), 5);
  TrainConfig c;
  c.steps = 200;
  c.warmup_steps = 20;
  c.batch = 8;
  const RunResult r = train_run(m, text_stream(text), c);
  CHECK(r.final_loss < 0.1);
}

TEST_CASE("RMS CSV header") {
  std::ostringstream os;
  write_rms_csv({{3, "block0.attn.q", "input", 1.0, 2.5}}, os);
  CHECK(os.str() == "step,tensor,role,rms,abs_max\n3,block0.attn.q,input,1,2.5\n");
}

TEST_CASE("abc shifted mup twin trains identically up to Adam epsilon") {
  TransformerConfig c = tiny_model(16);
  c.scheme.kind = SchemeKind::mup;
  c.scheme.base_width = 64;
  c.scheme.base_depth = 4;
  c.scheme.hps.eta = 0x1p-7;
  TrainConfig tc;
  tc.steps = 20;
  tc.warmup_steps = 4;
  tc.batch = 4;
  const TokenStream s = text_stream(synthetic_corpus(40000, 6));
  tc.adam.eps = 1e-20;
  const AbcCheckResult exact = abc_check(c, 2.0, s, tc, 3);
  CHECK(exact.losses.size() == 20);
  CHECK(exact.max_relative_deviation < 1e-10);
  // The shift scales gradients by theta but not epsilon.
  tc.adam.eps = 1e-8;
  const AbcCheckResult with_eps = abc_check(c, 2.0, s, tc, 3);
  CHECK(with_eps.max_relative_deviation > 10 * exact.max_relative_deviation);
  c.scheme.kind = SchemeKind::u_mup;
  CHECK_THROWS_WITH(abc_check(c, 2.0, s, tc, 3), doctest::Contains("model.abc_theta"));
}
