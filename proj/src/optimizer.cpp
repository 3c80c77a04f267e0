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

#include "p2net/optimizer.hpp"

#include <cmath>

#include "p2net/errors.hpp"

namespace p2net {

void optimizer_step(std::span<Tensor> params, OptimizerState& state) {
  if (!(state.learning_rate > 0.0)) throw ContractError("optimizer: learning rate must be > 0");
  ++state.step;
  if (state.algo == OptimizerAlgo::kAdam) {
    if (state.first_moment.empty()) {
      for (const Tensor& p : params) {
        state.first_moment.emplace_back(p.numel(), 0.0);
        state.second_moment.emplace_back(p.numel(), 0.0);
      }
    }
    if (state.first_moment.size() != params.size()) {
      throw ShapeError("optimizer: state tracks a different parameter list");
    }
  }
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto values = p.mutable_data();
    auto grad = p.grad();
    const bool has_grad = !grad.empty();
    if (state.algo == OptimizerAlgo::kSgd) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = (has_grad ? grad[i] : 0.0) + state.weight_decay * values[i];
        values[i] -= state.learning_rate * g;
      }
      continue;
    }
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size()) throw ShapeError("optimizer: moment buffer shape mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = (has_grad ? grad[i] : 0.0) + state.weight_decay * values[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace p2net
