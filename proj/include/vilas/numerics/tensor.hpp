// Copyright 2026 The vilas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vilas/error.hpp"

namespace vilas {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline thread_local bool grad_mode_enabled = true;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily; same length as value
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Disables graph recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_enabled) {
    detail::grad_mode_enabled = false;
  }
  ~NoGradGuard() { detail::grad_mode_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

// Dense row-major array with reverse-mode autodiff. A Tensor is a shared
// handle: copies alias the same node. Values are immutable once an op has
// produced them; only leaves expose mutable storage (parameter updates).
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeT> n) : node_(std::move(n)) {}

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_numel(shape)) +
                       " values, got " + std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  // Leaf storage, for optimizers and finite-difference probes.
  std::span<T> mutable_data() {
    if (!node_->is_leaf) {
      throw Error("mutable_data: only leaf tensors are writable (op '" +
                  std::string(node_->op) + "')");
    }
    return node_->value;
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                       " is not a scalar");
    }
    return node_->value[0];
  }

  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t i, std::size_t j) const {
    return node_->value.at(i * node_->shape.at(1) + j);
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  // Accumulates d(this)/d(leaf) into every requires_grad leaf reachable from
  // this scalar. Intermediate grads are reset on each call; leaf grads add up.
  void backward() const;

  const std::shared_ptr<NodeT>& node() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

namespace detail {

template <class T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

// Builds an op result. History is attached only if grad mode is on and some
// input requires grad; backward then receives the result node.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (grad_mode_enabled) {
    bool any = false;
    for (const auto* in : inputs) any = any || in->requires_grad();
    if (any) {
      n->requires_grad = true;
      n->is_leaf = false;
      for (const auto* in : inputs) n->parents.push_back(in->node());
      n->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(n));
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  if (grad_mode_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->is_leaf = false;
      for (const auto& in : inputs) n->parents.push_back(in.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(n));
}

// Grad buffer of parent k, or nullptr when that parent needs no gradient.
template <class T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t k) {
  auto& p = self.parents[k];
  if (!p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

}  // namespace detail

template <class T>
void Tensor<T>::backward() const {
  if (!defined()) throw Error("backward: undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(shape()));
  }
  if (!node_->requires_grad || node_->is_leaf) {
    if (!node_->requires_grad) {
      throw Error("backward: loss is detached from any graph (op '" +
                  std::string(node_->op) + "')");
    }
    node_->ensure_grad()[0] += T(1);
    return;
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && !p->is_leaf && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (NodeT* n : order) n->grad.assign(n->value.size(), T(0));
  node_->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace vilas
