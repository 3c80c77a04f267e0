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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "p2net/config.hpp"
#include "p2net/dataset.hpp"
#include "p2net/metrics.hpp"
#include "p2net/network.hpp"
#include "p2net/search.hpp"

namespace p2net {

// Mirror image, keypoints (x -> W - 1 - x) and bbox, then swap paired joints.
Sample flip_sample(const Sample& sample, const FlipSpec& fs);
Image flip_image(const Image& image);

// Draws a small plus-shaped marker per visible keypoint.
Image draw_markers(const Image& image, const std::vector<Point>& keypoints,
                   const std::vector<int>& visibility);

// Test-time pipeline: optional smoothing, optional flip averaging with the
// half-cell alignment shift, then quarter-offset decoding.
HeatmapSet combine_heatmaps(const HeatmapSet& hm, const HeatmapSet* flipped, const FlipSpec& fs,
                            int image_width, bool smooth);

std::vector<std::vector<DecodedKeypoint>> predict_keypoints(const P2Net& net,
                                                            const std::vector<const Sample*>& batch,
                                                            const FlipSpec& fs, bool flip,
                                                            bool smooth);
std::vector<std::vector<DecodedKeypoint>> oracle_keypoints(const std::vector<const Sample*>& batch,
                                                           const FlipSpec& fs, bool flip,
                                                           bool smooth, int stride, double sigma,
                                                           std::size_t heatmap_height,
                                                           std::size_t heatmap_width);

struct EvalResult {
  ApResult ap;
  PckhResult pckh;
  std::size_t instances = 0;
  std::size_t skipped = 0;  // instances without visible keypoints
  std::vector<Prediction> predictions;
};

EvalResult score_predictions(const std::vector<Sample>& samples,
                             const std::vector<std::vector<DecodedKeypoint>>& keypoints,
                             const std::vector<double>& oks_k, double pckh_threshold);

struct TrainResult {
  std::vector<double> losses;  // combined loss per executed step
  std::size_t first_step = 0;
  std::size_t steps = 0;
  std::optional<EvalResult> final_val;
};

struct TrainHooks {
  std::function<void(std::size_t step, double loss)> on_step;
};

// Outputs: train_log.csv, val_log.csv, model.ckpt (plus periodic ckpts).
TrainResult run_train(const ExperimentConfig& config, std::uint64_t seed,
                      const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

// Outputs: metrics.csv and predictions.jsonl. With `oracle`, the network is
// replaced by ground-truth-rendered heatmaps.
EvalResult run_eval(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& out_dir, bool oracle = false);

struct SearchOutcome {
  std::vector<SearchRecord> records;
  Policy policy;
};

// Outputs: search_log.csv (budget + 1 rows), alpha.json,
// alpha_trajectory.csv, policy.json; divergence.json on a numeric failure.
SearchOutcome run_search(const ExperimentConfig& config, std::uint64_t seed,
                         const std::filesystem::path& out_dir);

// Outputs: <id>.ppm, <id>_markers.ppm and annotations.jsonl per sample.
void run_augment(const ExperimentConfig& config, std::uint64_t seed,
                 const std::filesystem::path& out_dir);

void run_synth(const ExperimentConfig& config, std::uint64_t seed,
               const std::filesystem::path& out_dir);

// Writes gradcheck.csv; returns true when every family passes.
bool run_gradcheck(std::uint64_t seed, const std::filesystem::path& out_dir,
                   std::size_t instances = 20);

std::string alpha_to_json(const Alpha& alpha, const CandidateSet& candidates);

}  // namespace p2net
