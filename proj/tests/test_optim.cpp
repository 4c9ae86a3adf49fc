// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "uscale/optim.hpp"

using namespace uscale;

TEST_CASE("first step is a signed step of size lr") {
  const AdamConfig cfg;
  std::vector<double> w{1.0, -2.0, 0.5}, g{0.3, -4.0, 1e-3}, m(3, 0.0), v(3, 0.0);
  adamw_update(w, g, m, v, 1, 0.01, cfg);
  CHECK(w[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(w[2] == doctest::Approx(0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("decay is independent of the learning rate") {
  AdamConfig cfg;
  cfg.weight_decay = std::ldexp(1.0, -13);
  std::vector<double> w{1.0, -3.0}, g{0.7, 0.2}, m(2, 0.0), v(2, 0.0);
  adamw_update(w, g, m, v, 1, 0.0, cfg);
  CHECK(w[0] == 1.0 * (1 - std::ldexp(1.0, -13)));
  CHECK(w[1] == -3.0 * (1 - std::ldexp(1.0, -13)));

  // Halving the LR leaves the decay component unchanged.
  for (double lr : {0.01, 0.005}) {
    std::vector<double> a{0.8}, ga{0.1}, ma(1, 0.0), va(1, 0.0);
    std::vector<double> b{0.8}, mb(1, 0.0), vb(1, 0.0);
    AdamConfig nodecay = cfg;
    nodecay.weight_decay = 0.0;
    adamw_update(a, ga, ma, va, 1, lr, cfg);
    adamw_update(b, ga, mb, vb, 1, lr, nodecay);
    CHECK(std::fabs((b[0] - a[0]) - 0.8 * std::ldexp(1.0, -13)) < 1e-12 * 0.8 * std::ldexp(1.0, -13) + 1e-17);
  }
}

TEST_CASE("twin run with gradients scaled by 1e6") {
  const AdamConfig cfg;
  Rng rng(4);
  std::vector<double> w1(40), w2, m1(40, 0.0), v1(40, 0.0), m2(40, 0.0), v2(40, 0.0);
  for (double& x : w1) x = rng.normal();
  w2 = w1;
  for (std::size_t t = 1; t <= 5; ++t) {
    std::vector<double> g(40), gs(40), before = w1, before2 = w2;
    for (std::size_t i = 0; i < 40; ++i) {
      g[i] = (10 + 10 * rng.uniform()) * (rng.uniform() < 0.5 ? -1 : 1);
      gs[i] = g[i] * 1e6;
    }
    adamw_update(w1, g, m1, v1, t, 0.01, cfg);
    adamw_update(w2, gs, m2, v2, t, 0.01, cfg);
    for (std::size_t i = 0; i < 40; ++i) {
      const double u1 = w1[i] - before[i], u2 = w2[i] - before2[i];
      CHECK(std::fabs(u1 - u2) <= 1e-9 * std::fabs(u2));
    }
    w1 = w2;
  }
}

TEST_CASE("updates are invariant to gradient scale") {
  const AdamConfig cfg;
  Rng rng(3);
  std::vector<double> w1(50), w2, m1(50, 0.0), v1(50, 0.0), m2(50, 0.0), v2(50, 0.0);
  for (double& x : w1) x = rng.normal();
  w2 = w1;
  for (std::size_t t = 1; t <= 20; ++t) {
    std::vector<double> g(50), gs(50);
    for (std::size_t i = 0; i < 50; ++i) {
      g[i] = 1e-3 * (1 + rng.uniform()) * (rng.uniform() < 0.5 ? -1 : 1);
      gs[i] = g[i] * 1e6;
    }
    adamw_update(w1, g, m1, v1, t, 0.01, cfg);
    adamw_update(w2, gs, m2, v2, t, 0.01, cfg);
  }
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::fabs(w1[i] - w2[i]) < 1e-6);
}

TEST_CASE("errors") {
  const AdamConfig cfg;
  std::vector<double> w{1.0}, g{1.0}, m{0.0}, v{0.0};
  CHECK_THROWS_AS(adamw_update(w, g, m, v, 1, -0.1, cfg), std::invalid_argument);
  AdamConfig bad;
  bad.weight_decay = -1.0;
  CHECK_THROWS_AS(AdamW{bad}, std::invalid_argument);
  CHECK_THROWS_AS(adamw_update(w, g, m, v, 1, 0.1, bad), std::invalid_argument);
}

TEST_CASE("AdamW over tensors") {
  AdamConfig cfg;
  cfg.weight_decay = 0.01;
  AdamW opt(cfg);
  std::vector<Tensor> ps{Tensor::from({2}, {1.0, 2.0}, true), Tensor::from({1}, {3.0}, true)};
  ps[0].node().grad_buffer() = {1.0, -1.0};
  const std::vector<double> lrs{0.1, 0.1};
  const bool mask[] = {true, false};
  opt.step(ps, lrs, mask);
  CHECK(opt.steps_taken() == 1);
  CHECK(ps[0].data()[0] == doctest::Approx(1.0 - 0.1 * (1 / (1 + 1e-8)) - 0.01).epsilon(1e-14));
  CHECK(ps[1].data()[0] == 3.0);  // no grad, no decay
  std::vector<Tensor> fewer{ps[0]};
  const std::vector<double> one{0.1};
  CHECK_THROWS_AS(opt.step(fewer, one), std::invalid_argument);
}
