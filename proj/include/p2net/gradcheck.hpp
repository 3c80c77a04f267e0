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

#include <functional>
#include <string>
#include <vector>

#include "p2net/random.hpp"
#include "p2net/tensor.hpp"

namespace p2net {

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  // Inputs larger than this are probed at a random subset of coordinates.
  std::size_t max_coordinates_per_input = 24;
};

struct GradcheckOutcome {
  double relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t kinks_skipped = 0;
};

// Compares reverse-mode gradients of `loss_fn` with central differences on
// every tensor in `inputs` (which must be leaves with requires_grad set).
// The error is ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2)
// over all probed coordinates. Perturbations that flip the side of a ReLU or
// a top-k selection are discarded and re-drawn.
GradcheckOutcome check_gradients(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> inputs, Rng& rng,
                                 const GradcheckOptions& options = {});

// Random projection of `output` to a scalar, sum(weights * output). Used so
// checks see non-uniform output gradients.
Tensor project_to_scalar(const Tensor& output, const Tensor& weights);

}  // namespace p2net
