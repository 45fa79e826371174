// SPDX-License-Identifier: Apache-2.0
#include "softlm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "softlm/errors.hpp"

namespace softlm {

namespace {
std::atomic<std::uint64_t> g_next_seq{0};

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data,
                                       bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}
}  // namespace

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double> &detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape &Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const auto &s = shape();
  if (i >= s.size()) {
    throw DimensionError("dimension index " + std::to_string(i) +
                         " out of range for shape " + shape_str(s));
  }
  return s[i];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::clone() const {
  return Tensor(shape(), node_->data, node_->requires_grad);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

Tape::Tape(const Tensor &root) : root_(root) {
  if (!root.defined()) throw ContractError("backward on undefined tensor");
  std::unordered_set<detail::Node *> seen;
  std::vector<detail::Node *> stack;
  if (root.node()->requires_grad) stack.push_back(root.node().get());
  while (!stack.empty()) {
    auto *n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    nodes_.push_back(n);
    for (const auto &p : n->parents) {
      if (p->requires_grad && !seen.count(p.get())) stack.push_back(p.get());
    }
  }
  std::sort(nodes_.begin(), nodes_.end(),
            [](const detail::Node *a, const detail::Node *b) {
              return a->seq < b->seq;
            });
}

void Tape::backward() {
  auto *root = root_.node().get();
  // Intermediate buffers restart from zero each pass; leaves accumulate.
  for (auto *n : nodes_) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  if (root->is_leaf()) {
    root->grad_buffer()[0] += 1.0;
  } else if (!nodes_.empty()) {
    root->grad[0] = 1.0;
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto *n = *it;
    if (n->backward) {
      n->backward(*n);
#ifndef NDEBUG
      for (const auto &p : n->parents) {
        for (double g : p->grad) {
          if (!std::isfinite(g)) throw NumericalError("non-finite gradient", g);
        }
      }
#endif
    }
  }
}

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "<undef>"));
  }
  Tape(loss).backward();
}

namespace detail {

namespace {
thread_local bool g_grad_mode = true;
}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }
void set_grad_mode(bool on) { g_grad_mode = on; }

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents,
                   std::function<void(Node &)> rule) {
  bool needs = false;
  if (grad_mode_enabled()) {
    for (const auto &p : parents) needs = needs || p.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(data), needs);
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto &p : parents) node->parents.push_back(p.node());
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

void check_finite(const Node &node, const char *op) {
#ifndef NDEBUG
  for (double v : node.data) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + op, v);
    }
  }
#else
  (void)node;
  (void)op;
#endif
}

}  // namespace detail

}  // namespace softlm
