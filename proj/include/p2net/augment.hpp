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

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "p2net/image.hpp"
#include "p2net/random.hpp"

namespace p2net {

enum class AugKind {
  kTranslateX,
  kTranslateY,
  kRotate,
  kEqualize,
  kSolarize,
  kSolarizeAdd,
  kBrightness,
  kSharpness,
  kCutout,
  kScale,
};

inline constexpr std::array<AugKind, 10> kAllAugKinds = {
    AugKind::kTranslateX, AugKind::kTranslateY,  AugKind::kRotate,     AugKind::kEqualize,
    AugKind::kSolarize,   AugKind::kSolarizeAdd, AugKind::kBrightness, AugKind::kSharpness,
    AugKind::kCutout,     AugKind::kScale,
};

std::string_view to_string(AugKind kind);
// Throws ContractError for unknown names.
AugKind aug_kind_from_string(std::string_view name);
// Geometric kinds move keypoints; the rest only touch pixels.
bool is_geometric(AugKind kind);
// Equalize ignores its magnitude.
bool has_magnitude(AugKind kind);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
  double area() const { return width * height; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Visibility: 0 not labeled, 1 labeled but hidden, 2 visible.
struct Sample {
  std::string id;
  Image image;
  std::vector<Point> keypoints;
  std::vector<int> visibility;
  BoundingBox bbox;
  double head_size = 0.0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct AugOpSpec {
  AugKind kind = AugKind::kTranslateX;
  double probability = 0.0;
  double magnitude = 0.0;

  void validate() const;
  friend bool operator==(const AugOpSpec&, const AugOpSpec&) = default;
};

struct SubPolicy {
  std::vector<AugOpSpec> ops;
  friend bool operator==(const SubPolicy&, const SubPolicy&) = default;
};

struct Policy {
  std::vector<SubPolicy> sub_policies;
  friend bool operator==(const Policy&, const Policy&) = default;
};

// Native ranges reached at magnitude 10 (or spanned over 0..10). Rotate and
// Scale come from the reference setup; the others are configurable choices.
struct MagnitudeRanges {
  double translate_max_px = 40.0;
  double rotate_max_deg = 45.0;
  double solarize_add_max = 110.0;
  double brightness_min = 0.1;
  double brightness_max = 1.9;
  double sharpness_min = 0.1;
  double sharpness_max = 1.9;
  double cutout_max_px = 60.0;
  double scale_min = 0.7;
  double scale_max = 1.35;
  int cutout_patches = 1;
};

inline constexpr std::uint8_t kFillValue = 128;

// Linear map from normalized magnitude in [0, 10] to the native parameter:
// pixels for Translate/Cutout, degrees for Rotate, a threshold for Solarize,
// an additive amount for SolarizeAdd, a factor for Brightness/Sharpness/Scale.
// Translate and Rotate are unsigned here; the sign is drawn when applied.
double denormalize(AugKind kind, double magnitude, const MagnitudeRanges& ranges = {});

// Resamples the image and co-transforms keypoints and bbox with a signed,
// native parameter. Keypoints that leave the frame are demoted to v = 0 and
// revealed pixels are filled with mid-gray.
Sample apply_geometric(const Sample& sample, AugKind kind, double param);

// Pixel-only transforms. `rng` is consumed only by Cutout.
Image apply_photometric(const Image& image, AugKind kind, double param, Rng& rng,
                        int cutout_patches = 1);

// Applies one op unconditionally, drawing the sign for Translate/Rotate.
Sample apply_op(const Sample& sample, const AugOpSpec& op, Rng& rng,
                const MagnitudeRanges& ranges = {});

// Each op is applied in order with its own probability.
Sample apply_subpolicy(const Sample& sample, const SubPolicy& sub_policy, Rng& rng,
                       const MagnitudeRanges& ranges = {});

std::size_t draw_sub_policy(const Policy& policy, Rng& rng);

// Draws one sub-policy for the whole batch and applies it to every sample,
// each with its own stream derived from the batch draw and sample index.
// An empty policy returns the batch unchanged (with a warning).
std::vector<Sample> apply_policy(const std::vector<Sample>& batch, const Policy& policy, Rng& rng,
                                 const MagnitudeRanges& ranges = {},
                                 std::size_t* chosen = nullptr);

}  // namespace p2net
