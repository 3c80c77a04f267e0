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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "p2net/augment.hpp"
#include "p2net/metrics.hpp"

namespace p2net {

// dataset.json next to the split annotation files.
struct DatasetInfo {
  int image_width = 64;
  int image_height = 64;
  std::vector<std::string> joint_names;
  FlipSpec flip;
  std::vector<double> oks_k;
  std::vector<std::string> splits;
};

void save_dataset_info(const std::filesystem::path& root, const DatasetInfo& info);
DatasetInfo load_dataset_info(const std::filesystem::path& root);

// One JSON object per line: id, image (path relative to the dataset root),
// keypoints [[x, y, v], ...], bbox [x, y, w, h], head_size.
void save_annotations(const std::filesystem::path& root, const std::string& split,
                      const std::vector<Sample>& samples);
// Loads annotations and decodes every referenced image.
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split);

std::string annotation_line(const Sample& sample, const std::string& image_path);
std::filesystem::path image_relpath(const std::string& split, const std::string& id);

struct Prediction {
  std::string id;
  std::vector<DecodedKeypoint> keypoints;
  double score = 0.0;
};

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace p2net
