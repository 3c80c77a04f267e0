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

#include "p2net/losses.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2net/errors.hpp"
#include "p2net/ops.hpp"

namespace p2net {

namespace {

void check_pair(const char* what, const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.rank() != 4 || pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": pred " + shape_to_string(pred.shape()) +
                     " and target " + shape_to_string(target.shape()) + " must match and be 4-D");
  }
  if (mask.shape() != Shape{pred.dim(0), pred.dim(1)}) {
    throw ShapeError(std::string(what) + ": mask must be [B, K], got " +
                     shape_to_string(mask.shape()));
  }
}

}  // namespace

std::vector<double> render_target(const std::vector<Point>& keypoints,
                                  const std::vector<int>& visibility, std::size_t height,
                                  std::size_t width, const TargetOptions& options) {
  if (options.sigma <= 0.0) throw ContractError("render_target: sigma must be positive");
  if (options.stride <= 0) throw ContractError("render_target: stride must be positive");
  if (keypoints.size() != visibility.size()) {
    throw ContractError("render_target: keypoint and visibility counts differ");
  }
  const std::size_t plane = height * width;
  std::vector<double> out(keypoints.size() * plane, 0.0);
  const double radius = options.truncate * options.sigma;
  const double denom = 2.0 * options.sigma * options.sigma;
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    if (visibility[k] <= 0) continue;
    const double cx = keypoints[k].x / options.stride;
    const double cy = keypoints[k].y / options.stride;
    double* channel = out.data() + k * plane;
    const auto y0 = static_cast<long>(std::max(0.0, std::ceil(cy - radius)));
    const auto y1 = static_cast<long>(std::min<double>(height - 1.0, std::floor(cy + radius)));
    const auto x0 = static_cast<long>(std::max(0.0, std::ceil(cx - radius)));
    const auto x1 = static_cast<long>(std::min<double>(width - 1.0, std::floor(cx + radius)));
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        if (d2 > radius * radius) continue;
        channel[y * static_cast<long>(width) + x] = std::exp(-d2 / denom);
      }
    }
  }
  return out;
}

TargetBatch render_targets(const std::vector<Sample>& batch, std::size_t height,
                           std::size_t width, const TargetOptions& options) {
  if (batch.empty()) throw ContractError("render_targets: empty batch");
  const std::size_t k = batch.front().keypoints.size();
  std::vector<double> heat;
  std::vector<double> mask;
  heat.reserve(batch.size() * k * height * width);
  for (const Sample& s : batch) {
    if (s.keypoints.size() != k) throw ShapeError("render_targets: keypoint counts differ");
    const auto channels = render_target(s.keypoints, s.visibility, height, width, options);
    heat.insert(heat.end(), channels.begin(), channels.end());
    for (int v : s.visibility) mask.push_back(v > 0 ? 1.0 : 0.0);
  }
  return {Tensor::from_data({batch.size(), k, height, width}, std::move(heat)),
          Tensor::from_data({batch.size(), k}, std::move(mask))};
}

std::vector<double> per_keypoint_l2(const Tensor& pred, const Tensor& target) {
  const std::size_t channels = pred.dim(0) * pred.dim(1);
  const std::size_t plane = pred.dim(2) * pred.dim(3);
  auto p = pred.data();
  auto t = target.data();
  std::vector<double> losses(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
    losses[c] = acc / static_cast<double>(plane);
  }
  return losses;
}

Tensor l2_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  check_pair("l2_loss", pred, target, mask);
  const std::size_t channels = pred.dim(0) * pred.dim(1);
  const std::size_t plane = pred.dim(2) * pred.dim(3);
  auto m = mask.data();
  const double active = std::accumulate(m.begin(), m.end(), 0.0, [](double acc, double v) {
    return acc + (v > 0.0 ? 1.0 : 0.0);
  });
  if (active == 0.0) {
    spdlog::warn("l2_loss: every keypoint is masked, returning zero");
    return make_op_result("l2_loss", Shape{}, {0.0}, {pred}, [](std::span<const double>) {});
  }
  const auto losses = per_keypoint_l2(pred, target);
  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    if (m[c] > 0.0) total += losses[c];
  }
  TensorStorage* ps = pred.storage().get();
  std::vector<double> diff(pred.numel());
  {
    auto p = pred.data();
    auto t = target.data();
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = p[i] - t[i];
  }
  std::vector<double> keep(m.begin(), m.end());
  return make_op_result(
      "l2_loss", Shape{}, {total / active}, {pred},
      [ps, diff = std::move(diff), keep = std::move(keep), plane, active](
          std::span<const double> gout) {
        auto dp = work_buffer(ps);
        const double scale = 2.0 * gout[0] / (active * static_cast<double>(plane));
        for (std::size_t c = 0; c < keep.size(); ++c) {
          if (keep[c] <= 0.0) continue;
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) dp[i] += scale * diff[i];
        }
      });
}

Tensor ohkm_loss(const Tensor& pred, const Tensor& target, const Tensor& mask, int alpha_k) {
  check_pair("ohkm_loss", pred, target, mask);
  const std::size_t batch = pred.dim(0);
  const std::size_t keypoints = pred.dim(1);
  const std::size_t plane = pred.dim(2) * pred.dim(3);
  if (alpha_k < 1 || static_cast<std::size_t>(alpha_k) > keypoints) {
    throw ContractError("ohkm_loss: alpha_k must lie in [1, " + std::to_string(keypoints) + "]");
  }
  const auto losses = per_keypoint_l2(pred, target);
  auto m = mask.data();

  // weight[c] is the factor of channel c's per-keypoint loss in the result.
  std::vector<double> weight(batch * keypoints, 0.0);
  std::size_t samples = 0;
  KinkMonitor* monitor = KinkMonitor::active();
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < keypoints; ++k) {
      if (m[b * keypoints + k] > 0.0) order.push_back(k);
    }
    if (order.empty()) continue;
    ++samples;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      return losses[b * keypoints + a] > losses[b * keypoints + c];
    });
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(alpha_k));
    for (std::size_t i = 0; i < take; ++i) {
      weight[b * keypoints + order[i]] = 1.0 / static_cast<double>(take);
      if (monitor != nullptr) monitor->mix(b * keypoints + order[i]);
    }
  }
  if (samples == 0) {
    spdlog::warn("ohkm_loss: every keypoint is masked, returning zero");
    return make_op_result("ohkm_loss", Shape{}, {0.0}, {pred}, [](std::span<const double>) {});
  }
  double total = 0.0;
  for (std::size_t c = 0; c < weight.size(); ++c) {
    if (weight[c] > 0.0) total += weight[c] * losses[c];
  }
  const double inv_samples = 1.0 / static_cast<double>(samples);
  std::vector<double> diff(pred.numel());
  {
    auto p = pred.data();
    auto t = target.data();
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = p[i] - t[i];
  }
  TensorStorage* ps = pred.storage().get();
  return make_op_result(
      "ohkm_loss", Shape{}, {total * inv_samples}, {pred},
      [ps, diff = std::move(diff), weight = std::move(weight), plane, inv_samples](
          std::span<const double> gout) {
        auto dp = work_buffer(ps);
        for (std::size_t c = 0; c < weight.size(); ++c) {
          if (weight[c] <= 0.0) continue;
          const double scale =
              2.0 * gout[0] * weight[c] * inv_samples / static_cast<double>(plane);
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) dp[i] += scale * diff[i];
        }
      });
}

namespace {

// result[b] = sum_k weight[b, k] * mse(pred[b, k], target[b, k])
Tensor weighted_keypoint_losses(const char* name, const Tensor& pred, const Tensor& target,
                                std::vector<double> weight) {
  const std::size_t batch = pred.dim(0);
  const std::size_t keypoints = pred.dim(1);
  const std::size_t plane = pred.dim(2) * pred.dim(3);
  const auto losses = per_keypoint_l2(pred, target);
  std::vector<double> out(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < keypoints; ++k) {
      out[b] += weight[b * keypoints + k] * losses[b * keypoints + k];
    }
  }
  std::vector<double> diff(pred.numel());
  {
    auto p = pred.data();
    auto t = target.data();
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = p[i] - t[i];
  }
  TensorStorage* ps = pred.storage().get();
  return make_op_result(
      name, {batch}, std::move(out), {pred},
      [ps, diff = std::move(diff), weight = std::move(weight), keypoints, plane](
          std::span<const double> gout) {
        auto dp = work_buffer(ps);
        for (std::size_t c = 0; c < weight.size(); ++c) {
          if (weight[c] == 0.0) continue;
          const double scale =
              2.0 * gout[c / keypoints] * weight[c] / static_cast<double>(plane);
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) dp[i] += scale * diff[i];
        }
      });
}

}  // namespace

Tensor per_sample_l2(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  check_pair("per_sample_l2", pred, target, mask);
  const std::size_t keypoints = pred.dim(1);
  auto m = mask.data();
  std::vector<double> weight(m.size(), 0.0);
  for (std::size_t b = 0; b < pred.dim(0); ++b) {
    double active = 0.0;
    for (std::size_t k = 0; k < keypoints; ++k) active += m[b * keypoints + k] > 0.0 ? 1.0 : 0.0;
    for (std::size_t k = 0; k < keypoints; ++k) {
      if (m[b * keypoints + k] > 0.0) weight[b * keypoints + k] = 1.0 / active;
    }
  }
  return weighted_keypoint_losses("per_sample_l2", pred, target, std::move(weight));
}

Tensor per_sample_ohkm(const Tensor& pred, const Tensor& target, const Tensor& mask,
                       int alpha_k) {
  check_pair("per_sample_ohkm", pred, target, mask);
  const std::size_t keypoints = pred.dim(1);
  if (alpha_k < 1 || static_cast<std::size_t>(alpha_k) > keypoints) {
    throw ContractError("per_sample_ohkm: alpha_k must lie in [1, " + std::to_string(keypoints) +
                        "]");
  }
  const auto losses = per_keypoint_l2(pred, target);
  auto m = mask.data();
  std::vector<double> weight(m.size(), 0.0);
  KinkMonitor* monitor = KinkMonitor::active();
  for (std::size_t b = 0; b < pred.dim(0); ++b) {
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < keypoints; ++k) {
      if (m[b * keypoints + k] > 0.0) order.push_back(k);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      return losses[b * keypoints + a] > losses[b * keypoints + c];
    });
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(alpha_k));
    for (std::size_t i = 0; i < take; ++i) {
      weight[b * keypoints + order[i]] = 1.0 / static_cast<double>(take);
      if (monitor != nullptr) monitor->mix(b * keypoints + order[i]);
    }
  }
  return weighted_keypoint_losses("per_sample_ohkm", pred, target, std::move(weight));
}

Tensor per_sample_pose_loss(const Tensor& parallel, const Tensor& refined,
                            const TargetBatch& targets, int alpha_k) {
  return add(per_sample_l2(parallel, targets.heatmaps, targets.mask),
             per_sample_ohkm(refined, targets.heatmaps, targets.mask, alpha_k));
}

PoseLoss pose_loss(const Tensor& parallel, const Tensor& refined, const TargetBatch& targets,
                   int alpha_k) {
  PoseLoss out;
  out.parallel = l2_loss(parallel, targets.heatmaps, targets.mask);
  out.refined = ohkm_loss(refined, targets.heatmaps, targets.mask, alpha_k);
  out.total = add(out.parallel, out.refined);
  return out;
}

}  // namespace p2net
