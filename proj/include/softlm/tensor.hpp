// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace softlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

namespace detail {

// One vertex of the autodiff graph. Leaves (parameters, inputs) have no
// parents and no backward rule; op results hold both.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  std::uint64_t seq = 0;     // recording order
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<double> &grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// model parameters, optimizer state and the graph refer to one buffer. Use
/// clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape &shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Raw write access for optimizers and initializers; bypasses the graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy as a fresh leaf (gradient not copied).
  Tensor clone() const;
  /// Leaf sharing nothing with the graph; same values, no grad.
  Tensor detach() const;

  bool same_storage(const Tensor &other) const { return node_ == other.node_; }

  // engine internals
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node> &node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-ordered list of graph nodes reachable from a root that need
/// gradients. Built fresh for every backward pass.
class Tape {
 public:
  explicit Tape(const Tensor &root);

  std::size_t size() const { return nodes_.size(); }
  /// Nodes in recording order (inputs before the ops that consume them).
  const std::vector<detail::Node *> &nodes() const { return nodes_; }
  void backward();

 private:
  Tensor root_;
  std::vector<detail::Node *> nodes_;
};

/// Accumulates dloss/dtheta into every reachable requires_grad leaf.
/// Throws ContractError unless loss holds exactly one element.
void backward(const Tensor &loss);

namespace detail {
// Creates an op result. `parents` are recorded only when one of them needs
// gradients, in which case `rule` is attached as the backward closure.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(Node &)> rule);
void check_finite(const Node &node, const char *op);
bool grad_mode_enabled();
void set_grad_mode(bool on);
}  // namespace detail

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_enabled()) { detail::set_grad_mode(false); }
  ~NoGradGuard() { detail::set_grad_mode(prev_); }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

 private:
  bool prev_;
};

}  // namespace softlm
