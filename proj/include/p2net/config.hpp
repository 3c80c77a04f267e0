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

#include "p2net/network.hpp"
#include "p2net/optimizer.hpp"
#include "p2net/search.hpp"
#include "p2net/synth.hpp"

namespace p2net {

struct TrainingConfig {
  OptimizerAlgo optimizer = OptimizerAlgo::kAdam;
  double learning_rate = 5e-4;
  double weight_decay = 1e-5;
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  int alpha_k = 3;
  double sigma = 2.0;
  std::filesystem::path policy;  // empty: no augmentation
  std::size_t val_every = 500;   // 0 disables periodic validation
  std::size_t val_samples = 100;
  std::size_t checkpoint_every = 0;
  std::filesystem::path resume;
};

struct EvalConfig {
  std::vector<double> oks_k;  // empty: taken from dataset.json
  bool flip = true;
  bool smooth = true;
  double pckh_threshold = 0.5;
  std::string split = "test";
  std::size_t max_samples = 0;  // 0: whole split
  std::size_t batch_size = 16;
  std::filesystem::path checkpoint;
};

struct AugmentConfig {
  std::filesystem::path policy;
  std::string split = "train";
  std::size_t count = 16;
};

// INI-style file: [section] headers, key = value lines, '#' or ';' comments.
// Relative paths resolve against the config file's directory.
struct ExperimentConfig {
  std::filesystem::path source;
  std::filesystem::path data_root;
  SynthConfig dataset;
  NetworkConfig network;
  TrainingConfig training;
  SearchConfig search;
  EvalConfig eval;
  AugmentConfig augment;
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

std::vector<double> parse_double_list(const std::string& text);
std::vector<int> parse_int_list(const std::string& text);
std::vector<std::string> split_list(const std::string& text);

}  // namespace p2net
