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

#include <cstdint>
#include <span>
#include <vector>

#include "p2net/tensor.hpp"

namespace p2net {

enum class OptimizerAlgo { kSgd, kAdam };

// Per-parameter moments plus scalar settings. Moment buffers are created
// lazily on the first step and always shape-match their parameters.
struct OptimizerState {
  OptimizerAlgo algo = OptimizerAlgo::kAdam;
  double learning_rate = 5e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Applies one update to every parameter from its accumulated gradient.
// Parameters without a gradient are treated as having a zero gradient.
//   sgd:  p <- p - lr * (g + wd * p)
//   adam: bias-corrected moments of (g + wd * p)
void optimizer_step(std::span<Tensor> params, OptimizerState& state);

void zero_grads(std::span<Tensor> params);

}  // namespace p2net
