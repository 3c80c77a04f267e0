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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "p2net/augment.hpp"
#include "p2net/tensor.hpp"

namespace p2net {

// B x K x h x w responses plus the image-to-heatmap stride.
struct HeatmapSet {
  std::size_t batch = 0;
  std::size_t keypoints = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  int stride = 4;
  std::vector<double> values;

  HeatmapSet() = default;
  HeatmapSet(std::size_t b, std::size_t k, std::size_t h, std::size_t w, int stride_);
  static HeatmapSet from_tensor(const Tensor& t, int stride);

  double& at(std::size_t b, std::size_t k, std::size_t y, std::size_t x) {
    return values[((b * keypoints + k) * height + y) * width + x];
  }
  double at(std::size_t b, std::size_t k, std::size_t y, std::size_t x) const {
    return values[((b * keypoints + k) * height + y) * width + x];
  }
  bool same_shape(const HeatmapSet& o) const {
    return batch == o.batch && keypoints == o.keypoints && height == o.height && width == o.width;
  }
};

struct FlipSpec {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  // Throws ContractError for out-of-range, self or overlapping pairs.
  void validate(std::size_t keypoints) const;
  // Index of the channel that keypoint k becomes under a horizontal flip.
  std::vector<std::size_t> permutation(std::size_t keypoints) const;
};

struct DecodedKeypoint {
  double x = 0.0;  // image pixels
  double y = 0.0;
  double confidence = 0.0;
};

// Argmax (ties to the lowest row-major index) moved a quarter cell toward
// the larger neighbor on each axis, mapped to pixels as cell * stride.
DecodedKeypoint decode_channel(const double* channel, std::size_t height, std::size_t width,
                               int stride);
std::vector<std::vector<DecodedKeypoint>> decode(const HeatmapSet& hm);

// Separable 5x5 Gaussian, sigma 1 cell; weights renormalized at borders.
HeatmapSet gaussian_smooth(const HeatmapSet& hm, double sigma = 1.0, int radius = 2);

// Mirror every channel left-right (array flip, no channel swap).
HeatmapSet flip_horizontal(const HeatmapSet& hm);
HeatmapSet swap_channels(const HeatmapSet& hm, const FlipSpec& fs);

// out[x] = in[x + offset] with linear interpolation, clamped at the borders.
HeatmapSet shift_columns(const HeatmapSet& hm, double offset);

// Column offset that aligns an array-unflipped heatmap with the original
// image when pixel x maps to cell x / stride: (w - 1) - (W - 1) / stride.
double flip_alignment_offset(int image_width, int stride, std::size_t heatmap_width);

// Un-flip hm_flipped, swap paired channels, average with hm.
HeatmapSet flip_average(const HeatmapSet& hm, const HeatmapSet& hm_flipped, const FlipSpec& fs);

struct OksContext {
  std::vector<double> k;  // per-keypoint constants
  double scale = 0.0;     // sqrt(bbox area), pixels
};

// Gaussian-weighted similarity over keypoints with v > 0. Empty when none
// are visible.
std::optional<double> oks(const std::vector<Point>& pred, const std::vector<Point>& gt,
                          const std::vector<int>& visibility, const OksContext& ctx);

// One image: detections with scores and their OKS against every ground
// truth ([pred][gt]).
struct ImageMatches {
  std::vector<double> scores;
  std::vector<std::vector<double>> oks;
  std::size_t ground_truths = 0;
};

struct ApResult {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar = 0.0;
  std::vector<double> ap_per_threshold;
  std::vector<double> recall_per_threshold;
};

// Thresholds 0.50:0.05:0.95, greedy matching by descending score, 101-point
// interpolated precision, AR = mean of the final recall over thresholds.
ApResult ap_ar(const std::vector<ImageMatches>& images);
std::vector<double> oks_thresholds();

struct PckhResult {
  std::vector<double> per_keypoint;  // NaN for a keypoint never visible
  double total = 0.0;
  std::size_t visible = 0;
};

// A visible keypoint is correct iff its distance is <= thresh * head_size.
PckhResult pckh(const std::vector<std::vector<Point>>& pred,
                const std::vector<std::vector<Point>>& gt,
                const std::vector<std::vector<int>>& visibility,
                const std::vector<double>& head_sizes, double thresh = 0.5);

// Detection score times mean keypoint confidence.
double instance_score(double detection_score, const std::vector<DecodedKeypoint>& keypoints);

}  // namespace p2net
