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

#include "p2net/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2net/errors.hpp"
#include "p2net/ops.hpp"

namespace p2net {

namespace {

struct Probe {
  double value = 0.0;
  std::uint64_t fingerprint = 0;
};

Probe evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradGuard no_grad;
  KinkMonitor monitor;
  const double value = loss_fn().item();
  return {value, monitor.fingerprint()};
}

}  // namespace

GradcheckOutcome check_gradients(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> inputs, Rng& rng,
                                 const GradcheckOptions& options) {
  for (Tensor& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) {
      throw ContractError("check_gradients: inputs must be leaves that require grad");
    }
    t.zero_grad();
  }
  backward(loss_fn());
  const std::uint64_t base_fingerprint = evaluate(loss_fn).fingerprint;

  std::vector<double> analytic, numeric;
  GradcheckOutcome outcome;
  for (Tensor& t : inputs) {
    const std::size_t n = t.numel();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t wanted = std::min(n, options.max_coordinates_per_input);
    std::size_t taken = 0;
    auto values = t.mutable_data();
    const auto grad = t.grad();
    for (std::size_t index : order) {
      if (taken == wanted) break;
      const double original = values[index];
      values[index] = original + options.step;
      const Probe plus = evaluate(loss_fn);
      values[index] = original - options.step;
      const Probe minus = evaluate(loss_fn);
      values[index] = original;
      if (plus.fingerprint != base_fingerprint || minus.fingerprint != base_fingerprint) {
        ++outcome.kinks_skipped;
        continue;
      }
      analytic.push_back(grad.empty() ? 0.0 : grad[index]);
      numeric.push_back((plus.value - minus.value) / (2.0 * options.step));
      ++taken;
    }
  }

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff2 += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    a2 += analytic[i] * analytic[i];
    n2 += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(a2, n2));
  outcome.relative_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
  outcome.coordinates = analytic.size();
  return outcome;
}

Tensor project_to_scalar(const Tensor& output, const Tensor& weights) {
  return sum(mul(output, weights));
}

}  // namespace p2net
