// Copyright 2026 The P2Net Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "p2net/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "p2net/errors.hpp"

namespace p2net {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;
thread_local KinkMonitor* t_kink_monitor = nullptr;

std::uint64_t next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

std::shared_ptr<TensorStorage> make_storage(Shape shape, std::vector<double> data,
                                            bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto storage = std::make_shared<TensorStorage>();
  storage->shape = std::move(shape);
  storage->data = std::move(data);
  storage->requires_grad = requires_grad;
  storage->id = next_id();
  return storage;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(std::shared_ptr<TensorStorage> storage) : storage_(std::move(storage)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_storage(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_storage(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_storage(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_storage(Shape{}, std::vector<double>{value}, requires_grad));
}

const Shape& Tensor::shape() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::uint64_t Tensor::id() const { return storage_ ? storage_->id : 0; }

std::span<const double> Tensor::data() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return storage_->data[0];
}

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!storage_) throw ContractError("use of undefined tensor");
  storage_->requires_grad = value;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!storage_) throw ContractError("use of undefined tensor");
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (storage_ && !storage_->grad.empty()) {
    std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
  }
}

bool Tensor::is_leaf() const { return !storage_ || storage_->creator == nullptr; }

Tensor Tensor::detach() const {
  return Tensor(make_storage(shape(), storage_->data, false));
}

bool grad_mode_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_op_result(std::string op, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto storage = make_storage(std::move(shape), std::move(data), false);
  if (!t_grad_enabled) return Tensor(std::move(storage));
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return Tensor(std::move(storage));

  auto node = std::make_shared<Node>();
  node->id = next_id();
  node->op = std::move(op);
  node->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node->inputs.push_back(t.storage());
  node->output = storage.get();
  node->backward = std::move(backward);
  storage->requires_grad = true;
  storage->creator = std::move(node);
  return Tensor(std::move(storage));
}

std::span<double> work_buffer(TensorStorage* target) {
  if (target->work.empty()) target->work.assign(target->data.size(), 0.0);
  return target->work;
}

void add_to_work(TensorStorage* target, std::span<const double> values) {
  if (target == nullptr || !target->requires_grad) return;
  auto work = work_buffer(target);
  for (std::size_t i = 0; i < values.size(); ++i) work[i] += values[i];
}

std::vector<const Node*> collect_graph(const Tensor& root) {
  std::vector<const Node*> nodes;
  if (!root.defined() || !root.storage()->creator) return nodes;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack{root.storage()->creator.get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    const Node* node = stack.back();
    stack.pop_back();
    nodes.push_back(node);
    for (const auto& input : node->inputs) {
      const Node* creator = input->creator.get();
      if (creator && seen.insert(creator).second) stack.push_back(creator);
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->id < b->id; });
  return nodes;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  TensorStorage* root = loss.storage().get();
  if (!root->requires_grad) return;

  const std::vector<const Node*> graph = collect_graph(loss);
  std::vector<TensorStorage*> leaves;
  std::unordered_set<TensorStorage*> leaf_set;
  for (const Node* node : graph) {
    for (const auto& input : node->inputs) {
      if (input->requires_grad && !input->creator && leaf_set.insert(input.get()).second) {
        leaves.push_back(input.get());
      }
    }
  }
  if (graph.empty()) {
    // The loss itself is a leaf.
    leaves.push_back(root);
  }

  work_buffer(root)[0] += 1.0;
  for (auto it = graph.rbegin(); it != graph.rend(); ++it) {
    const Node* node = *it;
    TensorStorage* out = node->output;
    if (out->work.empty()) continue;
    node->backward(out->work);
    out->work.clear();
    out->work.shrink_to_fit();
  }
  for (TensorStorage* leaf : leaves) {
    if (leaf->work.empty()) continue;
    if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), 0.0);
    for (std::size_t i = 0; i < leaf->work.size(); ++i) leaf->grad[i] += leaf->work[i];
    leaf->work.clear();
  }
}

KinkMonitor::KinkMonitor() : previous_(t_kink_monitor) { t_kink_monitor = this; }

KinkMonitor::~KinkMonitor() { t_kink_monitor = previous_; }

void KinkMonitor::mix(std::uint64_t value) {
  hash_ ^= value;
  hash_ *= 1099511628211ULL;
}

KinkMonitor* KinkMonitor::active() { return t_kink_monitor; }

}  // namespace p2net
