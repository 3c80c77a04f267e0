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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace p2net {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct Node;

// Backing store shared by Tensor handles. `work` carries the gradient that
// is in flight during one backward pass; `grad` is the persistent,
// accumulating gradient of leaves.
struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  std::vector<double> work;
  bool requires_grad = false;
  std::shared_ptr<Node> creator;
  std::uint64_t id = 0;
};

// Receives the output gradient and adds into the `work` buffers of the
// inputs it captured.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

// One recorded primitive. `id` is drawn from a monotone counter, so sorting
// by id reproduces execution order.
struct Node {
  std::uint64_t id = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorStorage>> inputs;
  TensorStorage* output = nullptr;
  BackwardFn backward;
};

// Shared handle to a dense row-major array of doubles. Copies alias the same
// storage; use clone() or detach() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorStorage> storage);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::uint64_t id() const;

  std::span<const double> data() const;
  // Direct write access. Mutating data that a recorded graph still depends
  // on invalidates that graph's backward pass.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Empty span until the first backward pass reaches this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  // Deep copy of the values, no graph history, requires_grad false.
  Tensor detach() const;

  const std::shared_ptr<TensorStorage>& storage() const { return storage_; }

 private:
  std::shared_ptr<TensorStorage> storage_;
};

// Graph recording is on by default; NoGradGuard disables it for the current
// thread for the lifetime of the guard.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the output tensor of a primitive and, when any input participates
// in differentiation and grad mode is on, records a node whose backward
// rule is `backward`. The rule may only touch the storages listed in
// `inputs` via add_to_work().
Tensor make_op_result(std::string op, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs, BackwardFn backward);

// Adds `values` into the in-flight gradient of `target`, allocating it on
// first use. Safe to call for tensors that do not require grad (no-op).
void add_to_work(TensorStorage* target, std::span<const double> values);
// Returns the in-flight gradient buffer of `target`, zero-initialised.
std::span<double> work_buffer(TensorStorage* target);

// Nodes reachable from `root` in execution order.
std::vector<const Node*> collect_graph(const Tensor& root);

// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls
// until zero_grad(); the recorded graph is kept so the call may be repeated.
void backward(const Tensor& loss);

// Piecewise-linear primitives report which side of each kink their inputs
// fall on while a monitor is installed. Finite-difference checks use the
// fingerprint to discard perturbations that cross a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  void reset() { hash_ = 1469598103934665603ULL; }
  void mix(std::uint64_t value);

  static KinkMonitor* active();

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  KinkMonitor* previous_ = nullptr;
};

}  // namespace p2net
