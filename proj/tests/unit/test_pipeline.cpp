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

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "p2net/checkpoint.hpp"
#include "p2net/config.hpp"
#include "p2net/dataset.hpp"
#include "p2net/errors.hpp"
#include "p2net/experiment.hpp"
#include "p2net/synth.hpp"

namespace p2net {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("p2net_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr const char* kTinyConfig = R"(
[dataset]
image_width = 32
image_height = 32
joints = 5
train_size = 24
val_size = 8
test_size = 8

[network]
backbone_widths = 4,8
pyramid_width = 4
parallel_stages = 1

[training]
batch_size = 2
steps = 4
val_every = 0
lr = 1e-3

[search]
kinds = Rotate,Brightness
bins = 5
budget = 2
batch_size = 2
val_batch_size = 2

[evaluation]
split = val
batch_size = 4
)";

TEST(Config, ParsesSectionsAndResolvesPaths) {
  const ExperimentConfig c = parse_config(
      "[dataset]\nroot = data/x  # trailing comment\njoints = 7\n[training]\nlr = 0.01\n"
      "[search]\nkinds = Rotate, Cutout\nbins = 5,10\n[evaluation]\noks_k = 0.1\n",
      "/base");
  EXPECT_EQ(c.data_root, fs::path("/base/data/x"));
  EXPECT_EQ(c.dataset.joints, 7);
  EXPECT_EQ(c.network.keypoints, 7);
  EXPECT_DOUBLE_EQ(c.training.learning_rate, 0.01);
  EXPECT_EQ(c.search.candidates.size(), 4u);
  EXPECT_EQ(c.eval.oks_k.size(), 7u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("[training]\nlearning_rate = 1\n", "/"), ConfigError);
  EXPECT_THROW(parse_config("[bogus]\nx = 1\n", "/"), ConfigError);
  EXPECT_THROW(parse_config("[training]\nlr = -1\n", "/"), ConfigError);
  EXPECT_THROW(parse_config("[search]\nkinds = Blur\n", "/"), ConfigError);
  EXPECT_THROW(parse_config("[dataset]\nimage_width = 30\n", "/"), ConfigError);
  EXPECT_THROW(parse_config("[training]\nalpha_k = 9\n", "/"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/p2net.cfg"), ConfigError);
}

TEST(Config, ListParsing) {
  EXPECT_EQ(parse_int_list(" 1, 2 ,3"), (std::vector<int>{1, 2, 3}));
  EXPECT_THROW(parse_int_list("1.5"), ConfigError);
  EXPECT_THROW(parse_double_list("abc"), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const fs::path dir = fresh_dir("ckpt");
  const std::vector<NamedArray> arrays{{"a", {2, 2}, {1, 2, 3, 4}}, {"b", {}, {0.5}}};
  save_checkpoint(dir / "m.ckpt", arrays);
  const auto back = load_checkpoint(dir / "m.ckpt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].data, arrays[0].data);
  EXPECT_EQ(back[1].shape, arrays[1].shape);
  ASSERT_NE(find_array(back, "b"), nullptr);
  EXPECT_EQ(find_array(back, "c"), nullptr);
  std::string bytes = slurp(dir / "m.ckpt");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Synth, SamplesAreDeterministicAndWellFormed) {
  SynthConfig c;
  const Sample a = synth_sample(c, "x", 30.0, 42);
  const Sample b = synth_sample(c, "x", 30.0, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synth_sample(c, "x", 30.0, 43));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Sample s = synth_sample(c, "s", 30.0, seed);
    ASSERT_EQ(s.keypoints.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(s.visibility[k], 2);
      EXPECT_GE(s.keypoints[k].x, 0.0);
      EXPECT_LE(s.keypoints[k].x, c.image_width - 1.0);
      EXPECT_GE(s.keypoints[k].x, s.bbox.x);
      EXPECT_LE(s.keypoints[k].x, s.bbox.x + s.bbox.width);
    }
    EXPECT_GT(s.head_size, 0.0);
  }
}

TEST(Synth, JointNamesAndFlipPairs) {
  EXPECT_EQ(synth_joint_names(3).front(), "head");
  const FlipSpec fs = synth_flip_pairs(5);
  EXPECT_NO_THROW(fs.validate(5));
  EXPECT_EQ(fs.pairs.size(), 2u);
  EXPECT_THROW(SynthConfig{.joints = 2}.validate(), ConfigError);
}

TEST(Dataset, WriteAndReloadSplits) {
  const fs::path dir = fresh_dir("dataset");
  SynthConfig c;
  c.image_width = c.image_height = 32;
  c.train_size = 4;
  c.val_size = 2;
  c.test_size = 2;
  write_synth_dataset(c, 9, dir);
  const DatasetInfo info = load_dataset_info(dir);
  EXPECT_EQ(info.joint_names.size(), 5u);
  const auto val = load_split(dir, "val");
  const auto regenerated = synth_split(c, "val", 2, 9);
  ASSERT_EQ(val.size(), 2u);
  EXPECT_EQ(val[0].image, regenerated[0].image);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(val[0].keypoints[k].x, regenerated[0].keypoints[k].x, 1e-9);
  }
  EXPECT_THROW(load_split(dir, "nope"), IoError);
}

TEST(Dataset, PredictionsRoundTrip) {
  const fs::path dir = fresh_dir("preds");
  std::vector<Prediction> p{{"a", {{1.5, 2.25, 0.75}}, 0.5}};
  save_predictions(dir / "p.jsonl", p);
  const auto back = load_predictions(dir / "p.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].id, "a");
  EXPECT_DOUBLE_EQ(back[0].keypoints[0].y, 2.25);
}

class Pipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fresh_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    cfg = parse_config(kTinyConfig, root);
    cfg.data_root = root / "data";
    run_synth(cfg, 3, cfg.data_root);
  }
  fs::path root;
  ExperimentConfig cfg;
};

TEST_F(Pipeline, ZeroStepTrainingWritesInitialCheckpoint) {
  cfg.training.steps = 0;
  run_train(cfg, 1, root / "t0");
  EXPECT_TRUE(fs::exists(root / "t0" / "model.ckpt"));
}

TEST_F(Pipeline, ResumeMatchesUninterruptedRun) {
  run_train(cfg, 1, root / "full");
  cfg.training.checkpoint_every = 2;
  cfg.training.steps = 2;
  run_train(cfg, 1, root / "half");
  cfg.training.steps = 4;
  cfg.training.resume = root / "half" / "model.ckpt";
  run_train(cfg, 1, root / "resumed");
  EXPECT_TRUE(slurp(root / "full" / "model.ckpt") == slurp(root / "resumed" / "model.ckpt"));
}

TEST_F(Pipeline, EvalSearchAndAugmentProduceArtifacts) {
  run_train(cfg, 1, root / "train");
  cfg.eval.checkpoint = root / "train" / "model.ckpt";
  const EvalResult r = run_eval(cfg, 1, root / "eval");
  EXPECT_EQ(r.instances, 8u);
  EXPECT_TRUE(fs::exists(root / "eval" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(root / "eval" / "predictions.jsonl"));

  const SearchOutcome s = run_search(cfg, 1, root / "search");
  EXPECT_EQ(s.records.size(), 3u);
  EXPECT_TRUE(fs::exists(root / "search" / "policy.json"));

  cfg.augment.policy = root / "search" / "policy.json";
  cfg.augment.count = 2;
  run_augment(cfg, 1, root / "aug");
  EXPECT_TRUE(fs::exists(root / "aug" / "annotations.jsonl"));
}

TEST_F(Pipeline, OracleEvalIsNearPerfect) {
  cfg.dataset.image_width = cfg.dataset.image_height = 64;
  cfg.network.input_width = cfg.network.input_height = 64;
  cfg.data_root = root / "data64";
  run_synth(cfg, 3, cfg.data_root);
  const EvalResult r = run_eval(cfg, 1, root / "oracle", true);
  EXPECT_GT(r.pckh.total, 0.99);
  EXPECT_GT(r.ap.ap50, 0.99);
}

}  // namespace
}  // namespace p2net
