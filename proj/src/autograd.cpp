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

#include "vfit/autograd.hpp"

#include <unordered_set>

namespace vfit {

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (!node_) throw Error("grad() on undefined Var");
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value));
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    Node& n = *out.node();
    n.requires_grad = true;
    n.inputs.reserve(inputs.size());
    for (const Var& in : inputs) n.inputs.push_back(in.node());
    n.backward_fn = std::move(backward_fn);
  }
  return out;
}

void backward(const Var& root) {
  if (root.value().numel() != 1) {
    throw ShapeError("backward() without seed requires a single-element root, got " + shape_str(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
  require_same_shape(root.value(), seed, "backward seed");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Tensor& g = root.node()->grad_buffer();
  for (Index i = 0; i < g.numel(); ++i) g[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    node->backward_fn(*node);
    node->grad = Tensor();  // intermediates only; leaves have no backward_fn
  }
}

Var ParameterSet::add(const std::string& name, Tensor init) {
  if (lookup_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = Var::parameter(std::move(init));
  lookup_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

Var ParameterSet::find(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

Index ParameterSet::scalar_count() const {
  Index n = 0;
  for (const auto& [name, v] : entries_) n += v.value().numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

}  // namespace vfit
