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

#include "p2net/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "p2net/errors.hpp"
#include "p2net/random.hpp"

namespace p2net {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kHeadRadius = 0.11;
constexpr double kNeckGap = 0.04;

struct Segment {
  Point a, b;
  double thickness;
};

struct Figure {
  std::array<Point, 9> joints;  // canonical order
  Point head_top, head_center, neck, shoulder, hip, hip_left, hip_right;
};

Point add(Point p, double x, double y) { return {p.x + x, p.y + y}; }

// Direction measured from straight down, positive toward +x.
Point along(Point from, double angle, double length, double side) {
  return {from.x + side * std::sin(angle) * length, from.y + std::cos(angle) * length};
}

Figure random_pose(Rng& rng) {
  Figure f;
  f.head_top = {0.0, -0.5};
  f.head_center = {0.0, -0.5 + kHeadRadius};
  f.neck = {0.0, -0.5 + 2 * kHeadRadius + kNeckGap};
  f.shoulder = add(f.neck, 0.0, 0.04);
  f.hip = {0.0, 0.1};
  f.hip_left = add(f.hip, 0.05, 0.0);
  f.hip_right = add(f.hip, -0.05, 0.0);
  f.joints[0] = f.head_center;
  for (int side_index = 0; side_index < 2; ++side_index) {
    const double side = side_index == 0 ? 1.0 : -1.0;  // left = +x
    const double upper = uniform(rng, 15.0, 160.0) * kDeg;
    const double fore = std::clamp(upper + uniform(rng, -70.0, 70.0) * kDeg, 5.0 * kDeg,
                                   175.0 * kDeg);
    const Point elbow = along(f.shoulder, upper, 0.2, side);
    const Point hand = along(elbow, fore, 0.19, side);
    const double thigh = uniform(rng, 3.0, 40.0) * kDeg;
    const double shin = std::clamp(thigh + uniform(rng, -25.0, 25.0) * kDeg, 0.0, 60.0 * kDeg);
    const Point knee = along(side_index == 0 ? f.hip_left : f.hip_right, thigh, 0.2, side);
    const Point foot = along(knee, shin, 0.2, side);
    f.joints[1 + side_index] = hand;
    f.joints[3 + side_index] = foot;
    f.joints[5 + side_index] = elbow;
    f.joints[7 + side_index] = knee;
  }
  return f;
}

double segment_distance(double px, double py, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
}

void blend(Image& img, int x, int y, double coverage, const std::array<double, 3>& color) {
  if (coverage <= 0.0) return;
  coverage = std::min(coverage, 1.0);
  for (int c = 0; c < img.channels; ++c) {
    const double v = (1.0 - coverage) * img.at(x, y, c) + coverage * color[c];
    img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (joints < 3 || joints > 9) throw ConfigError("synth: joint count must lie in [3, 9]");
  if (image_width < 16 || image_height < 16) throw ConfigError("synth: images must be >= 16 px");
  if (noise < 0.0) throw ConfigError("synth: noise must be >= 0");
  if (!(figure_min > 0.0) || figure_max < figure_min || figure_max > 0.95) {
    throw ConfigError("synth: need 0 < figure_min <= figure_max <= 0.95");
  }
  if (!(oks_k > 0.0)) throw ConfigError("synth: oks_k must be positive");
  for (double r : {rotation_train, rotation_val, rotation_test}) {
    if (r < 0.0 || r > 180.0) throw ConfigError("synth: rotations must lie in [0, 180]");
  }
}

double SynthConfig::rotation_for(const std::string& split) const {
  if (split == "train") return rotation_train;
  if (split == "val") return rotation_val;
  if (split == "test") return rotation_test;
  throw ConfigError("unknown split '" + split + "'");
}

std::vector<std::string> synth_joint_names(int joints) {
  static const std::array<const char*, 9> kNames = {
      "head",       "left_hand",   "right_hand", "left_foot", "right_foot",
      "left_elbow", "right_elbow", "left_knee",  "right_knee"};
  if (joints < 3 || joints > 9) throw ConfigError("synth: joint count must lie in [3, 9]");
  return {kNames.begin(), kNames.begin() + joints};
}

FlipSpec synth_flip_pairs(int joints) {
  FlipSpec fs;
  for (std::size_t a = 1; a + 1 < static_cast<std::size_t>(joints); a += 2) {
    fs.pairs.emplace_back(a, a + 1);
  }
  return fs;
}

Sample synth_sample(const SynthConfig& config, const std::string& id, double max_rotation_deg,
                    std::uint64_t seed) {
  Rng rng(seed);
  const int w = config.image_width;
  const int h = config.image_height;
  Image img(w, h, 3);

  // Background: flat color, two gratings, pixel noise.
  std::array<double, 3> base{};
  for (double& v : base) v = uniform(rng, 40.0, 215.0);
  struct Grating {
    double fx, fy, phase, amp;
  };
  std::array<Grating, 2> gratings{};
  for (Grating& g : gratings) {
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double freq = uniform(rng, 0.05, 0.35);
    g = {freq * std::cos(theta), freq * std::sin(theta), uniform(rng, 0.0, 6.3),
         uniform(rng, 5.0, 25.0)};
  }
  std::normal_distribution<double> noise(0.0, config.noise > 0.0 ? config.noise : 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double tex = 0.0;
      for (const Grating& g : gratings) tex += g.amp * std::sin(g.fx * x + g.fy * y + g.phase);
      for (int c = 0; c < 3; ++c) {
        const double n = config.noise > 0.0 ? noise(rng) : 0.0;
        img.at(x, y, c) =
            static_cast<std::uint8_t>(std::clamp(std::round(base[c] + tex + n), 0.0, 255.0));
      }
    }
  }
  const double luminance = (base[0] + base[1] + base[2]) / 3.0;
  std::array<double, 3> color{};
  for (double& v : color) v = luminance > 128.0 ? uniform(rng, 0.0, 40.0) : uniform(rng, 215.0, 255.0);

  // Pose, size, rotation and placement.
  const Figure f = random_pose(rng);
  double height_px = uniform(rng, config.figure_min, config.figure_max) * h;
  const double rotation = uniform(rng, -max_rotation_deg, max_rotation_deg) * kDeg;
  const double cr = std::cos(rotation), sr = std::sin(rotation);
  auto place = [&](const Point& p, double scale) {
    return Point{scale * (cr * p.x - sr * p.y), scale * (sr * p.x + cr * p.y)};
  };
  std::vector<Point> outline(f.joints.begin(), f.joints.end());
  for (const Point& p : {f.head_top, f.neck, f.shoulder, f.hip, f.hip_left, f.hip_right}) {
    outline.push_back(p);
  }
  const double margin = 2.0;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0, thickness = 0;
  for (int attempt = 0;; ++attempt) {
    thickness = std::max(1.5, 0.06 * height_px);
    const double pad = std::max(thickness / 2.0, kHeadRadius * height_px);
    x0 = y0 = 1e300;
    x1 = y1 = -1e300;
    for (const Point& p : outline) {
      const Point q = place(p, height_px);
      x0 = std::min(x0, q.x - pad);
      x1 = std::max(x1, q.x + pad);
      y0 = std::min(y0, q.y - pad);
      y1 = std::max(y1, q.y + pad);
    }
    if (x1 - x0 <= w - 1 - 2 * margin && y1 - y0 <= h - 1 - 2 * margin) break;
    if (attempt > 50) throw ContractError("synth: figure does not fit the image");
    height_px *= 0.92;
  }
  const double tx = uniform(rng, margin - x0, w - 1 - margin - x1);
  const double ty = uniform(rng, margin - y0, h - 1 - margin - y1);
  auto to_image = [&](const Point& p) {
    const Point q = place(p, height_px);
    return Point{q.x + tx, q.y + ty};
  };

  const auto& j = f.joints;
  std::vector<Segment> segments = {
      {to_image(f.neck), to_image(f.hip), 1.4 * thickness},
      {to_image(f.hip_left), to_image(f.hip_right), thickness},
      {to_image(f.shoulder), to_image(j[5]), thickness},
      {to_image(j[5]), to_image(j[1]), thickness},
      {to_image(f.shoulder), to_image(j[6]), thickness},
      {to_image(j[6]), to_image(j[2]), thickness},
      {to_image(f.hip_left), to_image(j[7]), thickness},
      {to_image(j[7]), to_image(j[3]), thickness},
      {to_image(f.hip_right), to_image(j[8]), thickness},
      {to_image(j[8]), to_image(j[4]), thickness},
      {to_image(f.head_center), to_image(f.neck), thickness},
  };
  const Point head = to_image(f.head_center);
  const double head_radius = kHeadRadius * height_px;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double coverage = head_radius + 0.5 - std::hypot(x - head.x, y - head.y);
      for (const Segment& s : segments) {
        coverage = std::max(coverage, s.thickness / 2.0 + 0.5 - segment_distance(x, y, s.a, s.b));
      }
      blend(img, x, y, coverage, color);
    }
  }

  Sample sample;
  sample.id = id;
  sample.image = std::move(img);
  for (int k = 0; k < config.joints; ++k) {
    sample.keypoints.push_back(to_image(j[static_cast<std::size_t>(k)]));
    sample.visibility.push_back(2);
  }
  x0 = std::clamp(x0 + tx, 0.0, static_cast<double>(w));
  x1 = std::clamp(x1 + tx, 0.0, static_cast<double>(w));
  y0 = std::clamp(y0 + ty, 0.0, static_cast<double>(h));
  y1 = std::clamp(y1 + ty, 0.0, static_cast<double>(h));
  sample.bbox = {x0, y0, x1 - x0, y1 - y0};
  sample.head_size = (2 * kHeadRadius + kNeckGap) * height_px;
  return sample;
}

std::vector<Sample> synth_split(const SynthConfig& config, const std::string& split,
                                std::size_t count, std::uint64_t seed) {
  config.validate();
  const double rotation = config.rotation_for(split);
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%05zu", split.c_str(), i);
    samples.push_back(synth_sample(config, id, rotation, derive_seed(seed, {hash_label(split), i})));
  }
  return samples;
}

DatasetInfo synth_info(const SynthConfig& config) {
  DatasetInfo info;
  info.image_width = config.image_width;
  info.image_height = config.image_height;
  info.joint_names = synth_joint_names(config.joints);
  info.flip = synth_flip_pairs(config.joints);
  info.oks_k.assign(static_cast<std::size_t>(config.joints), config.oks_k);
  info.splits = {"train", "val", "test"};
  return info;
}

void write_synth_dataset(const SynthConfig& config, std::uint64_t seed,
                         const std::filesystem::path& out_dir) {
  config.validate();
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", config.train_size}, {"val", config.val_size}, {"test", config.test_size}};
  std::filesystem::create_directories(out_dir);
  for (const auto& [split, count] : splits) {
    std::filesystem::create_directories(out_dir / "images" / split);
    const auto samples = synth_split(config, split, count, seed);
    for (const Sample& s : samples) write_pnm(out_dir / image_relpath(split, s.id), s.image);
    save_annotations(out_dir, split, samples);
  }
  save_dataset_info(out_dir, synth_info(config));
}

}  // namespace p2net
