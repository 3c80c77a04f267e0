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
#include <vector>

#include "p2net/augment.hpp"
#include "p2net/tensor.hpp"

namespace p2net {

struct TargetOptions {
  int stride = 4;
  double sigma = 2.0;     // heatmap cells
  double truncate = 3.0;  // radius in units of sigma
};

// One channel per keypoint, K x h x w, row-major. The peak sits at
// keypoint / stride in heatmap coordinates; v = 0 channels stay zero.
std::vector<double> render_target(const std::vector<Point>& keypoints,
                                  const std::vector<int>& visibility, std::size_t height,
                                  std::size_t width, const TargetOptions& options = {});

struct TargetBatch {
  Tensor heatmaps;  // [B, K, h, w]
  Tensor mask;      // [B, K], 1 for v > 0
};

TargetBatch render_targets(const std::vector<Sample>& batch, std::size_t height,
                           std::size_t width, const TargetOptions& options = {});

// Mean squared error over unmasked channels. Gradient flows to pred only.
Tensor l2_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);

// Per sample, the alpha_k unmasked keypoints with the largest per-keypoint
// L2 are averaged; the result is the mean over samples that have any
// unmasked keypoint. Ties keep the lower keypoint index.
Tensor ohkm_loss(const Tensor& pred, const Tensor& target, const Tensor& mask, int alpha_k);

// Per-keypoint mean squared error, [B, K], no gradient.
std::vector<double> per_keypoint_l2(const Tensor& pred, const Tensor& target);

// Per-sample losses, [B]. Each sample averages its own unmasked channels
// (L2) or its own top alpha_k channels (OHKM); fully masked samples give 0.
Tensor per_sample_l2(const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor per_sample_ohkm(const Tensor& pred, const Tensor& target, const Tensor& mask, int alpha_k);
Tensor per_sample_pose_loss(const Tensor& parallel, const Tensor& refined,
                            const TargetBatch& targets, int alpha_k);

struct PoseLoss {
  Tensor total;
  Tensor parallel;  // L2 on the intermediate head
  Tensor refined;   // OHKM on the refine head
};

PoseLoss pose_loss(const Tensor& parallel, const Tensor& refined, const TargetBatch& targets,
                   int alpha_k);

}  // namespace p2net
