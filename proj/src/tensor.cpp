// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace uscale {

namespace {

std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

void round_to_single(std::vector<double>& xs) {
  for (double& x : xs) x = static_cast<double>(static_cast<float>(x));
}

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel(shape))
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  n->id = next_node_id();
  return n;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

double Node::attr(const std::string& key, double fallback) const {
  for (const auto& [k, v] : attrs)
    if (k == key) return v;
  return fallback;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = uscale::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = uscale::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double std, bool requires_grad) {
  std::vector<double> v(uscale::numel(shape));
  for (double& x : v) x = std * rng.normal();
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

std::size_t Tensor::dim(int i) const {
  const int r = static_cast<int>(rank());
  const int k = i < 0 ? r + i : i;
  if (k < 0 || k >= r)
    throw std::out_of_range("tensor: dimension " + std::to_string(i) + " out of range for shape " +
                            shape_str(shape()));
  return shape()[static_cast<std::size_t>(k)];
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

EngineSettings& engine_settings() {
  thread_local EngineSettings settings;
  return settings;
}

ScopedEngineSettings::ScopedEngineSettings(EngineSettings settings) : saved_(engine_settings()) {
  engine_settings() = settings;
}

ScopedEngineSettings::~ScopedEngineSettings() { engine_settings() = saved_; }

Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  if (value.size() != numel(shape))
    throw std::logic_error(op + ": produced " + std::to_string(value.size()) +
                           " values for shape " + shape_str(shape));
  if (engine_settings().precision == Precision::fp32) round_to_single(value);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  n->id = next_node_id();
  n->inputs.reserve(inputs.size());
  for (auto& t : inputs) {
    n->requires_grad = n->requires_grad || t.requires_grad();
    n->inputs.push_back(t.ptr());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return Tensor(std::move(n));
}

std::vector<Node*> topo_order(const Tensor& root) {
  std::vector<Node*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  // Iterative post-order DFS; visiting inputs in declaration order keeps the
  // result deterministic for a given graph.
  std::vector<std::pair<Node*, std::size_t>> stack;
  std::unordered_set<const Node*> seen;
  auto mark = [&](Node* n) { return seen.insert(n).second; };
  Node* r = &root.node();
  mark(r);
  stack.emplace_back(r, 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && mark(child)) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& output, std::span<const double> seed_grad) {
  if (!output.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (seed_grad.size() != output.numel())
    throw std::invalid_argument("backward: seed gradient has " + std::to_string(seed_grad.size()) +
                                " values for shape " + shape_str(output.shape()));
  if (!output.requires_grad()) return;
  auto order = topo_order(output);
  auto& g = output.node().grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed_grad[i];
  const bool single = engine_settings().precision == Precision::fp32;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    if (single) round_to_single(n->grad);
    n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<none>")));
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

void zero_grads(const Tensor& root) {
  for (Node* n : topo_order(root)) n->grad.clear();
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor probe = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  Tensor y = f(probe);
  backward(y);
  const std::vector<double> analytic = probe.grad_or_zeros();

  double worst = 0.0;
  std::vector<double> base(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double delta) {
      std::vector<double> shifted = base;
      shifted[i] += delta;
      return f(Tensor::from(x.shape(), std::move(shifted))).item();
    };
    const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
    const double err = std::fabs(analytic[i] - fd) / (std::fabs(analytic[i]) + std::fabs(fd) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace uscale
