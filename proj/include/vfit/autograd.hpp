//  Copyright (c) 2026 The VFIT Authors
//
//  Licensed under the Apache License, Version 2.0 (the "License");
//  you may not use this file except in compliance with the License.
//  You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
//  Unless required by applicable law or agreed to in writing, software
//  distributed under the License is distributed on an "AS IS" BASIS,
//  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//  See the License for the specific language governing permissions and
//  limitations under the License.

// Minimal tape-free reverse-mode differentiation. Every differentiable op
// returns a Var whose node keeps its inputs alive and knows how to push its
// gradient back into them; backward() walks the graph in reverse topological
// order from a scalar root.

#ifndef VFIT_AUTOGRAD_HPP_
#define VFIT_AUTOGRAD_HPP_

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vfit/tensor.hpp"

namespace vfit {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers and tests; never use on graph intermediates.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  /// Accumulated gradient; zeros of the value's shape when nothing flowed in.
  Tensor grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Creates an op result. The backward closure is dropped when no input needs a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

/// Seeds d(root)/d(root) = 1 (root must hold one element) and accumulates into leaves.
void backward(const Var& root);
/// Backward with an explicit upstream gradient of root's shape.
void backward(const Var& root, const Tensor& seed);

/// Named, ordered collection of trainable leaves.
class ParameterSet {
 public:
  Var add(const std::string& name, Tensor init);
  const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() noexcept { return entries_; }
  Var find(const std::string& name) const;
  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  Index scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> lookup_;
};

}  // namespace vfit

#endif  // VFIT_AUTOGRAD_HPP_
