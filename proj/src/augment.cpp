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

#include "p2net/augment.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "p2net/errors.hpp"

namespace p2net {

namespace {

constexpr double kFrameTolerance = 1e-9;

std::uint8_t clamp_round(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

bool in_frame(const Point& p, int width, int height) {
  return p.x >= -kFrameTolerance && p.y >= -kFrameTolerance &&
         p.x <= width - 1 + kFrameTolerance && p.y <= height - 1 + kFrameTolerance;
}

// Forward map p' = center + A (p - center) for a 2x2 matrix A.
struct Affine {
  double a, b, c, d;
  double cx, cy;

  Point apply(const Point& p) const {
    const double x = p.x - cx, y = p.y - cy;
    return {cx + a * x + b * y, cy + c * x + d * y};
  }
  Affine inverse() const {
    const double det = a * d - b * c;
    return {d / det, -b / det, -c / det, a / det, cx, cy};
  }
};

double sample_bilinear(const Image& image, double sx, double sy, int channel) {
  const int w = image.width, h = image.height;
  if (sx < -kFrameTolerance || sy < -kFrameTolerance || sx > w - 1 + kFrameTolerance ||
      sy > h - 1 + kFrameTolerance) {
    return kFillValue;
  }
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(std::floor(sx)), std::max(w - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(sy)), std::max(h - 2, 0));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = sx - x0, fy = sy - y0;
  const double top = (1.0 - fx) * image.at(x0, y0, channel) + fx * image.at(x1, y0, channel);
  const double bottom = (1.0 - fx) * image.at(x0, y1, channel) + fx * image.at(x1, y1, channel);
  return (1.0 - fy) * top + fy * bottom;
}

void transform_annotations(Sample& out, const Sample& in, auto&& map) {
  for (std::size_t k = 0; k < in.keypoints.size(); ++k) {
    out.keypoints[k] = map(in.keypoints[k]);
    if (out.visibility[k] >= 1 && !in_frame(out.keypoints[k], out.image.width, out.image.height)) {
      out.visibility[k] = 0;
    }
  }
  const BoundingBox& b = in.bbox;
  const Point corners[4] = {{b.x, b.y},
                            {b.x + b.width, b.y},
                            {b.x, b.y + b.height},
                            {b.x + b.width, b.y + b.height}};
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const Point& corner : corners) {
    const Point p = map(corner);
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  x0 = std::clamp(x0, 0.0, static_cast<double>(out.image.width));
  x1 = std::clamp(x1, 0.0, static_cast<double>(out.image.width));
  y0 = std::clamp(y0, 0.0, static_cast<double>(out.image.height));
  y1 = std::clamp(y1, 0.0, static_cast<double>(out.image.height));
  out.bbox = {x0, y0, x1 - x0, y1 - y0};
}

Sample translate(const Sample& in, int dx, int dy) {
  Sample out = in;
  const Image& src = in.image;
  Image& dst = out.image;
  for (int y = 0; y < dst.height; ++y) {
    for (int x = 0; x < dst.width; ++x) {
      const int sx = x - dx, sy = y - dy;
      for (int c = 0; c < dst.channels; ++c) {
        dst.at(x, y, c) = src.contains(sx, sy) ? src.at(sx, sy, c) : kFillValue;
      }
    }
  }
  transform_annotations(out, in, [dx, dy](const Point& p) {
    return Point{p.x + dx, p.y + dy};
  });
  return out;
}

Sample warp(const Sample& in, const Affine& forward) {
  Sample out = in;
  const Affine inverse = forward.inverse();
  for (int y = 0; y < out.image.height; ++y) {
    for (int x = 0; x < out.image.width; ++x) {
      const Point src = inverse.apply({static_cast<double>(x), static_cast<double>(y)});
      for (int c = 0; c < out.image.channels; ++c) {
        out.image.at(x, y, c) = clamp_round(sample_bilinear(in.image, src.x, src.y, c));
      }
    }
  }
  transform_annotations(out, in, [&forward](const Point& p) { return forward.apply(p); });
  return out;
}

Image equalize(const Image& image) {
  Image out = image;
  const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
  for (int c = 0; c < image.channels; ++c) {
    std::array<std::size_t, 256> histogram{};
    for (std::size_t i = 0; i < count; ++i) ++histogram[image.pixels[i * image.channels + c]];
    std::array<std::size_t, 256> cdf{};
    std::size_t running = 0;
    for (int v = 0; v < 256; ++v) {
      running += histogram[v];
      cdf[v] = running;
    }
    std::size_t cdf_min = 0;
    for (int v = 0; v < 256; ++v) {
      if (histogram[v] != 0) {
        cdf_min = cdf[v];
        break;
      }
    }
    const std::size_t denom = count - cdf_min;
    if (denom == 0) continue;  // constant channel
    std::array<std::uint8_t, 256> lut{};
    for (int v = 0; v < 256; ++v) {
      const std::size_t num = cdf[v] >= cdf_min ? cdf[v] - cdf_min : 0;
      // round(255 * num / denom), halves rounded up
      lut[v] = static_cast<std::uint8_t>((2 * 255 * num + denom) / (2 * denom));
    }
    for (std::size_t i = 0; i < count; ++i) {
      auto& p = out.pixels[i * image.channels + c];
      p = lut[p];
    }
  }
  return out;
}

Image sharpen(const Image& image, double factor) {
  Image out = image;
  for (int y = 1; y + 1 < image.height; ++y) {
    for (int x = 1; x + 1 < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int ky = -1; ky <= 1; ++ky) {
          for (int kx = -1; kx <= 1; ++kx) {
            acc += (kx == 0 && ky == 0 ? 5.0 : 1.0) * image.at(x + kx, y + ky, c);
          }
        }
        const double blur = acc / 13.0;
        const double orig = image.at(x, y, c);
        out.at(x, y, c) = clamp_round(blur + factor * (orig - blur));
      }
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(AugKind kind) {
  switch (kind) {
    case AugKind::kTranslateX: return "TranslateX";
    case AugKind::kTranslateY: return "TranslateY";
    case AugKind::kRotate: return "Rotate";
    case AugKind::kEqualize: return "Equalize";
    case AugKind::kSolarize: return "Solarize";
    case AugKind::kSolarizeAdd: return "SolarizeAdd";
    case AugKind::kBrightness: return "Brightness";
    case AugKind::kSharpness: return "Sharpness";
    case AugKind::kCutout: return "Cutout";
    case AugKind::kScale: return "Scale";
  }
  return "?";
}

AugKind aug_kind_from_string(std::string_view name) {
  for (AugKind kind : kAllAugKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw ContractError("unknown augmentation kind '" + std::string(name) + "'");
}

bool is_geometric(AugKind kind) {
  return kind == AugKind::kTranslateX || kind == AugKind::kTranslateY ||
         kind == AugKind::kRotate || kind == AugKind::kScale;
}

bool has_magnitude(AugKind kind) { return kind != AugKind::kEqualize; }

void AugOpSpec::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw ContractError("augmentation probability must lie in [0, 1]");
  }
  if (!(magnitude >= 0.0 && magnitude <= 10.0)) {
    throw ContractError("augmentation magnitude must lie in [0, 10]");
  }
}

namespace {

// Linear map of t in [0, 1] onto [lo, hi] that hits the midpoint exactly at t = 0.5.
double centered(double lo, double hi, double t) {
  return std::midpoint(lo, hi) + (t - 0.5) * (hi - lo);
}

}  // namespace

double denormalize(AugKind kind, double magnitude, const MagnitudeRanges& ranges) {
  if (!(magnitude >= 0.0 && magnitude <= 10.0)) {
    throw ContractError("magnitude " + std::to_string(magnitude) + " outside [0, 10]");
  }
  const double t = magnitude / 10.0;
  switch (kind) {
    case AugKind::kTranslateX:
    case AugKind::kTranslateY: return ranges.translate_max_px * t;
    case AugKind::kRotate: return ranges.rotate_max_deg * t;
    case AugKind::kEqualize: return 0.0;
    case AugKind::kSolarize: return 256.0 * (1.0 - t);
    case AugKind::kSolarizeAdd: return ranges.solarize_add_max * t;
    case AugKind::kBrightness: return centered(ranges.brightness_min, ranges.brightness_max, t);
    case AugKind::kSharpness: return centered(ranges.sharpness_min, ranges.sharpness_max, t);
    case AugKind::kCutout: return ranges.cutout_max_px * t;
    case AugKind::kScale: return std::lerp(ranges.scale_min, ranges.scale_max, t);
  }
  throw ContractError("unhandled augmentation kind");
}

Sample apply_geometric(const Sample& sample, AugKind kind, double param) {
  const double cx = (sample.image.width - 1) / 2.0;
  const double cy = (sample.image.height - 1) / 2.0;
  switch (kind) {
    case AugKind::kTranslateX:
      return translate(sample, static_cast<int>(std::lround(param)), 0);
    case AugKind::kTranslateY:
      return translate(sample, 0, static_cast<int>(std::lround(param)));
    case AugKind::kRotate: {
      const double theta = param * std::numbers::pi / 180.0;
      const double cs = std::cos(theta), sn = std::sin(theta);
      return warp(sample, Affine{cs, -sn, sn, cs, cx, cy});
    }
    case AugKind::kScale: {
      if (!(param > 0.0)) throw ContractError("scale factor must be positive");
      Sample out = warp(sample, Affine{param, 0.0, 0.0, param, cx, cy});
      out.head_size = sample.head_size * param;
      return out;
    }
    default:
      throw ContractError("apply_geometric called with photometric kind " +
                          std::string(to_string(kind)));
  }
}

Image apply_photometric(const Image& image, AugKind kind, double param, Rng& rng,
                        int cutout_patches) {
  switch (kind) {
    case AugKind::kEqualize:
      return equalize(image);
    case AugKind::kSolarize: {
      Image out = image;
      for (auto& p : out.pixels) {
        if (p > param) p = static_cast<std::uint8_t>(255 - p);
      }
      return out;
    }
    case AugKind::kSolarizeAdd: {
      Image out = image;
      for (auto& p : out.pixels) {
        if (p < 128) p = clamp_round(p + param);
      }
      return out;
    }
    case AugKind::kBrightness: {
      Image out = image;
      for (auto& p : out.pixels) p = clamp_round(param * p);
      return out;
    }
    case AugKind::kSharpness:
      return sharpen(image, param);
    case AugKind::kCutout: {
      Image out = image;
      const int side = static_cast<int>(std::lround(param));
      for (int patch = 0; patch < cutout_patches; ++patch) {
        const int cx = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(image.width)));
        const int cy = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(image.height)));
        const int x0 = std::max(cx - side / 2, 0), y0 = std::max(cy - side / 2, 0);
        const int x1 = std::min(cx - side / 2 + side, image.width);
        const int y1 = std::min(cy - side / 2 + side, image.height);
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = kFillValue;
          }
        }
      }
      return out;
    }
    default:
      throw ContractError("apply_photometric called with geometric kind " +
                          std::string(to_string(kind)));
  }
}

Sample apply_op(const Sample& sample, const AugOpSpec& op, Rng& rng,
                const MagnitudeRanges& ranges) {
  op.validate();
  double param = denormalize(op.kind, op.magnitude, ranges);
  if (op.kind == AugKind::kTranslateX || op.kind == AugKind::kTranslateY ||
      op.kind == AugKind::kRotate) {
    if (coin(rng)) param = -param;
  }
  if (is_geometric(op.kind)) return apply_geometric(sample, op.kind, param);
  Sample out = sample;
  out.image = apply_photometric(sample.image, op.kind, param, rng, ranges.cutout_patches);
  return out;
}

Sample apply_subpolicy(const Sample& sample, const SubPolicy& sub_policy, Rng& rng,
                       const MagnitudeRanges& ranges) {
  Sample current = sample;
  for (const AugOpSpec& op : sub_policy.ops) {
    const double u = uniform01(rng);
    if (u < op.probability) current = apply_op(current, op, rng, ranges);
  }
  return current;
}

std::size_t draw_sub_policy(const Policy& policy, Rng& rng) {
  if (policy.sub_policies.empty()) throw ContractError("cannot draw from an empty policy");
  return uniform_index(rng, policy.sub_policies.size());
}

std::vector<Sample> apply_policy(const std::vector<Sample>& batch, const Policy& policy, Rng& rng,
                                 const MagnitudeRanges& ranges, std::size_t* chosen) {
  if (policy.sub_policies.empty()) {
    spdlog::warn("apply_policy: empty policy, batch left unchanged");
    return batch;
  }
  const std::size_t k = draw_sub_policy(policy, rng);
  if (chosen) *chosen = k;
  const std::uint64_t base = rng();
  std::vector<Sample> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng sample_rng(derive_seed(base, {i}));
    out.push_back(apply_subpolicy(batch[i], policy.sub_policies[k], sample_rng, ranges));
  }
  return out;
}

}  // namespace p2net
