// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace uscale {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Gradient buffer of input `i`, or nullptr if that input needs none.
double* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.grad_buffer().data();
}

const std::vector<double>& value_of(const Node& self, std::size_t i) {
  return self.inputs[i]->value;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1 || is_suffix(b.shape(), a.shape())) return a.shape();
  if (a.numel() == 1 || is_suffix(a.shape(), b.shape())) return b.shape();
  throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()) + " do not broadcast");
}

void require_positive_factor(const char* op, double k) {
  if (!(k > 0.0) || !std::isfinite(k))
    throw std::invalid_argument(std::string(op) + ": factor must be finite and positive, got " +
                                std::to_string(k));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class F>
Tensor unary(const Tensor& x, const char* op, F f, BackwardFn bwd) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), op, {x}, std::move(bwd));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("add", a, b);
  const std::size_t n = numel(shape), na = a.numel(), nb = b.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i % na] + b.data()[i % nb];
  return make_result(std::move(shape), std::move(out), "add", {a, b}, [na, nb](Node& self) {
    const auto& g = self.grad;
    if (double* ga = grad_of(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i % na] += g[i];
    if (double* gb = grad_of(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("sub", a, b);
  const std::size_t n = numel(shape), na = a.numel(), nb = b.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i % na] - b.data()[i % nb];
  return make_result(std::move(shape), std::move(out), "sub", {a, b}, [na, nb](Node& self) {
    const auto& g = self.grad;
    if (double* ga = grad_of(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i % na] += g[i];
    if (double* gb = grad_of(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("mul", a, b);
  const std::size_t n = numel(shape), na = a.numel(), nb = b.numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i % na] * b.data()[i % nb];
  return make_result(std::move(shape), std::move(out), "mul", {a, b}, [na, nb](Node& self) {
    const auto& g = self.grad;
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (double* ga = grad_of(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i % na] += g[i] * bv[i % nb];
    if (double* gb = grad_of(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * av[i % na];
  });
}

Tensor scale(const Tensor& x, double k) {
  Tensor t = unary(x, "scale", [k](double v) { return k * v; }, [k](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += k * self.grad[i];
  });
  t.node().attrs = {{"k", k}};
  return t;
}

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0))
    throw std::invalid_argument("matmul: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(w.shape()) + " are incompatible");
  const auto k = static_cast<Eigen::Index>(w.dim(0));
  const auto m = static_cast<Eigen::Index>(w.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / w.dim(0));
  Shape shape = x.shape();
  shape.back() = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows * m));
  Map(out.data(), rows, m).noalias() = MapC(x.data().data(), rows, k) * MapC(w.data().data(), k, m);
  return make_result(std::move(shape), std::move(out), "matmul", {x, w},
                     [rows, k, m](Node& self) {
                       MapC g(self.grad.data(), rows, m);
                       if (double* gx = grad_of(self, 0))
                         Map(gx, rows, k).noalias() += g * MapC(value_of(self, 1).data(), k, m).transpose();
                       if (double* gw = grad_of(self, 1))
                         Map(gw, k, m).noalias() += MapC(value_of(self, 0).data(), rows, k).transpose() * g;
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: expected 2D, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return make_result({c, r}, std::move(out), "transpose", {x}, [r, c](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
  });
}

Tensor swap_axes12(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("swap_axes12: expected 4D, got " + shape_str(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  std::vector<double> out(x.numel());
  auto src = [=](std::size_t i, std::size_t j, std::size_t k) { return ((i * b + j) * c + k) * d; };
  auto dst = [=](std::size_t i, std::size_t j, std::size_t k) { return ((i * c + k) * b + j) * d; };
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k)
        std::copy_n(x.data().data() + src(i, j, k), d, out.data() + dst(i, j, k));
  return make_result({a, c, b, d}, std::move(out), "swap_axes12", {x}, [=](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t e = 0; e < d; ++e) gx[src(i, j, k) + e] += self.grad[dst(i, j, k) + e];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("gather_rows: table must be 2D, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<TokenId> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= vocab)
      throw std::out_of_range("gather_rows: id " + std::to_string(rows[r]) + " at position " +
                              std::to_string(r) + " is not below vocab " + std::to_string(vocab));
    std::copy_n(table.data().data() + rows[r] * width, width, out.data() + r * width);
  }
  const std::size_t n = rows.size();
  return make_result({n, width}, std::move(out), "gather_rows", {table},
                     [rows = std::move(rows), width](Node& self) {
                       double* gt = grad_of(self, 0);
                       for (std::size_t r = 0; r < rows.size(); ++r)
                         for (std::size_t j = 0; j < width; ++j)
                           gt[rows[r] * width + j] += self.grad[r * width + j];
                     });
}

Tensor sum(const Tensor& x) {
  long double s = 0.0L;
  for (double v : x.data()) s += v;
  return make_result({}, {static_cast<double>(s)}, "sum", {x}, [](Node& self) {
    double* gx = grad_of(self, 0);
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  long double s = 0.0L;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return make_result({}, {static_cast<double>(s / n)}, "mean", {x}, [n](Node& self) {
    double* gx = grad_of(self, 0);
    const std::size_t count = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < count; ++i) gx[i] += self.grad[0] / n;
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("softmax: scalar input");
  const std::size_t d = x.dim(-1), rows = x.numel() / d;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * d;
    double* o = out.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [rows, d](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      gx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * self.value[i];
  });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](Node& self) {
    double* gx = grad_of(self, 0);
    const auto& xv = value_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] / xv[i];
  });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] / (2.0 * self.value[i]);
  });
}

Tensor where(std::span<const std::uint8_t> mask, const Tensor& a, const Tensor& b) {
  require_same_shape("where", a, b);
  if (mask.size() != a.numel())
    throw std::invalid_argument("where: mask has " + std::to_string(mask.size()) +
                                " entries for shape " + shape_str(a.shape()));
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? a.data()[i] : b.data()[i];
  return make_result(a.shape(), std::move(out), "where", {a, b}, [m = std::move(m)](Node& self) {
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (m[i] && ga) ga[i] += self.grad[i];
      if (!m[i] && gb) gb[i] += self.grad[i];
    }
  });
}

Tensor scale_fwd(const Tensor& x, double k) {
  require_positive_factor("scale_fwd", k);
  const double gk = engine_settings().exact_scaling ? k : 1.0;
  Tensor t = unary(x, "scale_fwd", [k](double v) { return k * v; }, [gk](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += gk * self.grad[i];
  });
  t.node().attrs = {{"k", k}};
  return t;
}

Tensor scale_bwd(const Tensor& x, double k) {
  require_positive_factor("scale_bwd", k);
  const double gk = engine_settings().exact_scaling ? 1.0 : k;
  Tensor t = unary(x, "scale_bwd", [](double v) { return v; }, [gk](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += gk * self.grad[i];
  });
  t.node().attrs = {{"k", k}};
  return t;
}

Tensor cast(const Tensor& x, const FloatFormat& fmt) {
  Tensor t = unary(x, "cast", [&fmt](double v) { return quantize(v, fmt); }, [](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
  t.node().attrs = {{"exponent_bits", fmt.exponent_bits}, {"mantissa_bits", fmt.mantissa_bits}};
  return t;
}

Tensor cast_grad(const Tensor& x, const FloatFormat& fmt) {
  Tensor t = unary(x, "cast_grad", [](double v) { return v; }, [fmt](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += quantize(self.grad[i], fmt);
  });
  t.node().attrs = {{"exponent_bits", fmt.exponent_bits}, {"mantissa_bits", fmt.mantissa_bits}};
  return t;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, double logit_scale,
                      bool causal) {
  require_same_shape("attention", q, k);
  require_same_shape("attention", q, v);
  if (q.rank() != 4) throw std::invalid_argument("attention: expected [B, H, S, D], got " + shape_str(q.shape()));
  const auto s = static_cast<Eigen::Index>(q.dim(2));
  const auto d = static_cast<Eigen::Index>(q.dim(3));
  const std::size_t slices = q.dim(0) * q.dim(1);
  const std::size_t stride = static_cast<std::size_t>(s * d);
  const std::size_t pstride = static_cast<std::size_t>(s * s);
  auto probs = std::make_shared<std::vector<double>>(slices * pstride);
  std::vector<double> out(q.numel());
  // Slices are copied into aligned locals so Eigen's vectorized reductions
  // do not depend on where a buffer happens to start; results are then
  // bit-reproducible across allocations.
  RowMat qm(s, d), km(s, d), vm(s, d), p(s, s), o(s, d);
  for (std::size_t b = 0; b < slices; ++b) {
    qm = MapC(q.data().data() + b * stride, s, d);
    km = MapC(k.data().data() + b * stride, s, d);
    vm = MapC(v.data().data() + b * stride, s, d);
    p.noalias() = logit_scale * (qm * km.transpose());
    for (Eigen::Index i = 0; i < s; ++i) {
      // Masked entries are written as exact zeros: a vectorized exp of -inf
      // can return a subnormal, which slows every later product.
      const Eigen::Index n = causal ? i + 1 : s;
      auto row = p.row(i).head(n);
      const double mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
      p.row(i).tail(s - n).setZero();
    }
    o.noalias() = p * vm;
    Map(out.data() + b * stride, s, d) = o;
    Map(probs->data() + b * pstride, s, s) = p;
  }
  Tensor t = make_result(q.shape(), std::move(out), "attention", {q, k, v},
                         [=](Node& self) {
                           double* gq = grad_of(self, 0);
                           double* gk = grad_of(self, 1);
                           double* gv = grad_of(self, 2);
                           RowMat qm(s, d), km(s, d), vm(s, d), p(s, s), go(s, d), dp(s, s), ds(s, s), acc(s, d);
                           for (std::size_t b = 0; b < slices; ++b) {
                             qm = MapC(value_of(self, 0).data() + b * stride, s, d);
                             km = MapC(value_of(self, 1).data() + b * stride, s, d);
                             vm = MapC(value_of(self, 2).data() + b * stride, s, d);
                             p = MapC(probs->data() + b * pstride, s, s);
                             go = MapC(self.grad.data() + b * stride, s, d);
                             if (gv) {
                               acc.noalias() = p.transpose() * go;
                               Map(gv + b * stride, s, d) += acc;
                             }
                             dp.noalias() = go * vm.transpose();
                             for (Eigen::Index i = 0; i < s; ++i) {
                               const double dot = p.row(i).dot(dp.row(i));
                               ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
                             }
                             if (gq) {
                               acc.noalias() = logit_scale * (ds * km);
                               Map(gq + b * stride, s, d) += acc;
                             }
                             if (gk) {
                               acc.noalias() = logit_scale * (ds.transpose() * qm);
                               Map(gk + b * stride, s, d) += acc;
                             }
                           }
                         });
  t.node().attrs = {{"logit_scale", logit_scale}, {"causal", causal ? 1.0 : 0.0}};
  return t;
}

Tensor gated_silu(const Tensor& x_in, const Tensor& x_gate, double alpha) {
  require_same_shape("gated_silu", x_in, x_gate);
  std::vector<double> out(x_in.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double g = x_gate.data()[i];
    out[i] = x_in.data()[i] * g / (1.0 + std::exp(-alpha * g));
  }
  Tensor t = make_result(x_in.shape(), std::move(out), "gated_silu", {x_in, x_gate},
                         [alpha](Node& self) {
                           const auto& xi = value_of(self, 0);
                           const auto& xg = value_of(self, 1);
                           double* gi = grad_of(self, 0);
                           double* gg = grad_of(self, 1);
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             const double sg = 1.0 / (1.0 + std::exp(-alpha * xg[i]));
                             const double g = self.grad[i];
                             if (gi) gi[i] += g * xg[i] * sg;
                             if (gg) gg[i] += g * xi[i] * (sg + alpha * xg[i] * sg * (1.0 - sg));
                           }
                         });
  t.node().attrs = {{"alpha", alpha}};
  return t;
}

Tensor rmsnorm(const Tensor& x, double eps) {
  if (x.rank() < 1 || x.dim(-1) == 0) throw std::invalid_argument("rmsnorm: empty last dimension");
  const std::size_t d = x.dim(-1), rows = x.numel() / d;
  std::vector<double> inv(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * d;
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += in[j] * in[j];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[j] * inv[r];
  }
  Tensor t = make_result(x.shape(), std::move(out), "rmsnorm", {x},
                         [rows, d, inv = std::move(inv)](Node& self) {
                           double* gx = grad_of(self, 0);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* y = self.value.data() + r * d;
                             const double* g = self.grad.data() + r * d;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                             dot /= static_cast<double>(d);
                             for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[j] - y[j] * dot) * inv[r];
                           }
                         });
  t.node().attrs = {{"eps", eps}};
  return t;
}

Tensor rope(const Tensor& x, std::span<const double> positions, double base) {
  if (x.rank() < 2) throw std::invalid_argument("rope: expected [..., S, D], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(-1), s = x.dim(-2);
  if (d % 2 != 0) throw std::invalid_argument("rope: head dimension " + std::to_string(d) + " is odd");
  if (positions.size() != s)
    throw std::invalid_argument("rope: " + std::to_string(positions.size()) + " positions for sequence length " +
                                std::to_string(s));
  const std::size_t half = d / 2;
  auto cs = std::make_shared<std::vector<double>>(s * half);
  auto sn = std::make_shared<std::vector<double>>(s * half);
  for (std::size_t p = 0; p < s; ++p)
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      (*cs)[p * half + i] = std::cos(positions[p] * theta);
      (*sn)[p * half + i] = std::sin(positions[p] * theta);
    }
  const std::size_t outer = x.numel() / (s * d);
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t p = 0; p < s; ++p)
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t at = (o * s + p) * d + 2 * i;
        const double c = (*cs)[p * half + i], n = (*sn)[p * half + i];
        const double x0 = x.data()[at], x1 = x.data()[at + 1];
        out[at] = x0 * c - x1 * n;
        out[at + 1] = x0 * n + x1 * c;
      }
  Tensor t = make_result(x.shape(), std::move(out), "rope", {x}, [=](Node& self) {
    double* gx = grad_of(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t p = 0; p < s; ++p)
        for (std::size_t i = 0; i < half; ++i) {
          const std::size_t at = (o * s + p) * d + 2 * i;
          const double c = (*cs)[p * half + i], n = (*sn)[p * half + i];
          const double g0 = self.grad[at], g1 = self.grad[at + 1];
          gx[at] += g0 * c + g1 * n;
          gx[at + 1] += -g0 * n + g1 * c;
        }
  });
  t.node().attrs = {{"base", base}};
  return t;
}

Tensor rope(const Tensor& x, double base) {
  if (x.rank() < 2) throw std::invalid_argument("rope: expected [..., S, D], got " + shape_str(x.shape()));
  std::vector<double> pos(x.dim(-2));
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<double>(i);
  return rope(x, pos, base);
}

Tensor softmax_xent(const Tensor& logits, std::span<const TokenId> targets, double alpha) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_xent: expected [N, s], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), s = logits.dim(1);
  if (s < 2) throw std::invalid_argument("softmax_xent: need at least 2 classes");
  if (targets.size() != rows)
    throw std::invalid_argument("softmax_xent: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(rows) + " rows");
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  long double total = 0.0L;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] >= s)
      throw std::out_of_range("softmax_xent: target " + std::to_string(tgt[r]) + " at row " + std::to_string(r) +
                              " is not below " + std::to_string(s));
    const double* z = logits.data().data() + r * s;
    double* p = probs->data() + r * s;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s; ++j) mx = std::max(mx, alpha * z[j]);
    double sum_e = 0.0;
    for (std::size_t j = 0; j < s; ++j) sum_e += (p[j] = std::exp(alpha * z[j] - mx));
    for (std::size_t j = 0; j < s; ++j) p[j] /= sum_e;
    total += mx + std::log(sum_e) - alpha * z[tgt[r]];
  }
  const double n = static_cast<double>(rows);
  Tensor t = make_result({}, {static_cast<double>(total / n)}, "softmax_xent", {logits},
                         [=, tgt = std::move(tgt)](Node& self) {
                           double* gz = grad_of(self, 0);
                           const double k = self.grad[0] * alpha / n;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* p = probs->data() + r * s;
                             for (std::size_t j = 0; j < s; ++j) gz[r * s + j] += k * p[j];
                             gz[r * s + tgt[r]] -= k;
                           }
                         });
  t.node().attrs = {{"alpha", alpha}};
  return t;
}

Tensor hardtanh(const Tensor& x) {
  return unary(x, "hardtanh", [](double v) { return std::clamp(v, -1.0, 1.0); }, [](Node& self) {
    double* gx = grad_of(self, 0);
    const auto& xv = value_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (std::fabs(xv[i]) < 1.0) gx[i] += self.grad[i];
  });
}

}  // namespace uscale
