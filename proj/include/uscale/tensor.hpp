// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uscale/rng.hpp"

namespace uscale {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Backward rule: reads `self.grad` and accumulates into the gradients of
/// `self.inputs`.
using BackwardFn = std::function<void(Node& self)>;

/// One record of the tape. Inputs are held by shared ownership, so a graph
/// lives exactly as long as some tensor refers to its output.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::pair<std::string, double>> attrs;
  std::vector<NodePtr> inputs;
  BackwardFn backward;
  std::uint64_t id = 0;

  /// Gradient buffer, zero-initialised on first access.
  std::vector<double>& grad_buffer();
  double attr(const std::string& key, double fallback = 0.0) const;
};

/// Dense row-major tensor of doubles; a handle onto a tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double std = 1.0, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  /// Size of dimension `i`; negative indices count from the back.
  std::size_t dim(int i) const;

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  /// Gradient, or an empty span if none has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double> grad_or_zeros() const;
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  void zero_grad() const { node_->grad.clear(); }

  Node& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }
  std::uint64_t node_id() const { return node_->id; }

 private:
  NodePtr node_;
};

enum class Precision { fp64, fp32 };

/// Per-thread engine switches. Each worker owns its tapes, so these never
/// need to be shared.
struct EngineSettings {
  /// fp32 rounds every op output and every propagated gradient to single.
  Precision precision = Precision::fp64;
  /// When set, scale_fwd(x, k) becomes an exact multiply and scale_bwd an
  /// identity; the network then carries true gradients.
  bool exact_scaling = false;
};

EngineSettings& engine_settings();

/// Restores the previous thread-local settings on destruction.
class ScopedEngineSettings {
 public:
  explicit ScopedEngineSettings(EngineSettings settings);
  ~ScopedEngineSettings();
  ScopedEngineSettings(const ScopedEngineSettings&) = delete;
  ScopedEngineSettings& operator=(const ScopedEngineSettings&) = delete;

 private:
  EngineSettings saved_;
};

/// Records an op output on the tape. `backward` is dropped if no input
/// requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                   std::vector<Tensor> inputs, BackwardFn backward);

/// Nodes reachable from `root` that take part in differentiation, in
/// topological order (inputs before outputs).
std::vector<Node*> topo_order(const Tensor& root);

/// Reverse pass from a scalar loss (seed gradient 1).
void backward(const Tensor& loss);

/// Reverse pass from any tensor with an explicit seed gradient.
void backward(const Tensor& output, std::span<const double> seed_grad);

/// Clears gradients on every node reachable from `root`.
void zero_grads(const Tensor& root);

/// Max relative error between the analytic gradient of a scalar function
/// and central differences, over every coordinate of `x`.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 double eps = 1e-4);

}  // namespace uscale
