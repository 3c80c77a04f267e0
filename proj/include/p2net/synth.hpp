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
#include <filesystem>
#include <string>
#include <vector>

#include "p2net/augment.hpp"
#include "p2net/dataset.hpp"
#include "p2net/metrics.hpp"

namespace p2net {

struct SynthConfig {
  int image_width = 64;
  int image_height = 64;
  int joints = 5;  // 3..9
  std::size_t train_size = 2000;
  std::size_t val_size = 200;
  std::size_t test_size = 200;
  double noise = 6.0;  // background pixel noise stddev
  // Largest absolute in-plane rotation of the figure, degrees, per split.
  double rotation_train = 0.0;
  double rotation_val = 0.0;
  double rotation_test = 0.0;
  // Figure height as a fraction of the image height.
  double figure_min = 0.55;
  double figure_max = 0.8;
  double oks_k = 0.15;

  void validate() const;
  double rotation_for(const std::string& split) const;
};

// head, left_hand, right_hand, left_foot, right_foot, left_elbow,
// right_elbow, left_knee, right_knee; truncated to `joints`. Left is the
// figure's left, which appears on the image's right.
std::vector<std::string> synth_joint_names(int joints);
FlipSpec synth_flip_pairs(int joints);

Sample synth_sample(const SynthConfig& config, const std::string& id, double max_rotation_deg,
                    std::uint64_t seed);
std::vector<Sample> synth_split(const SynthConfig& config, const std::string& split,
                                std::size_t count, std::uint64_t seed);

DatasetInfo synth_info(const SynthConfig& config);
void write_synth_dataset(const SynthConfig& config, std::uint64_t seed,
                         const std::filesystem::path& out_dir);

}  // namespace p2net
