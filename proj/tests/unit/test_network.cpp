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

#include <algorithm>

#include "p2net/errors.hpp"
#include "p2net/network.hpp"
#include "p2net/ops.hpp"
#include "p2net/random.hpp"

namespace p2net {
namespace {

NetworkConfig tiny(std::vector<int> widths, int stages, int stride, int size) {
  NetworkConfig c;
  c.backbone_widths = std::move(widths);
  c.parallel_stages = stages;
  c.heatmap_stride = stride;
  c.input_height = size;
  c.input_width = size;
  c.pyramid_width = 4;
  c.keypoints = 3;
  return c;
}

TEST(ShapeLaws, EveryValidCombinationBuildsAndRuns) {
  Rng rng(1);
  for (std::size_t levels = 1; levels <= 3; ++levels) {
    for (int stages = 0; stages <= 2; ++stages) {
      for (int stride : {2, 4}) {
        std::vector<int> widths;
        for (std::size_t l = 0; l < levels; ++l) widths.push_back(4 << l);
        const int size = stride << levels;
        const NetworkConfig cfg = tiny(widths, stages, stride, size);
        P2Net net(cfg, 7);
        Tensor x = random_normal({1, 3, static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, rng);
        const auto feats = net.backbone().forward(x, Mode::kTrain);
        ASSERT_EQ(feats.size(), levels);
        for (std::size_t l = 0; l + 1 < feats.size(); ++l) {
          EXPECT_EQ(feats[l].dim(2), 2 * feats[l + 1].dim(2));
          EXPECT_EQ(feats[l].dim(3), 2 * feats[l + 1].dim(3));
        }
        const FeaturePyramid pyr = net.pyramid().forward(feats);
        EXPECT_EQ(pyr[0].dim(2), static_cast<std::size_t>(size / stride));
        const P2NetOutput out = net.forward(x, Mode::kTrain);
        const Shape want{1, 3, static_cast<std::size_t>(size / stride), static_cast<std::size_t>(size / stride)};
        EXPECT_EQ(out.parallel.shape(), want);
        EXPECT_EQ(out.refined.shape(), want);
      }
    }
  }
}

TEST(ShapeLaws, IndivisibleInputIsRejectedWithPaddingHint) {
  NetworkConfig cfg = tiny({4, 8, 16}, 1, 4, 60);
  try {
    cfg.validate();
    FAIL() << "expected a contract error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("pad to 64x64"), std::string::npos);
  }
  EXPECT_THROW(P2Net(cfg, 1), ContractError);
  EXPECT_THROW(P2Net(tiny({4}, 1, 3, 12), 1), ContractError);
  EXPECT_THROW(P2Net(tiny({}, 1, 4, 16), 1), ContractError);
}

TEST(ShapeLaws, PyramidRequiresHalvingChain) {
  EXPECT_NO_THROW(FeaturePyramid({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 4, 4})}));
  EXPECT_THROW(FeaturePyramid({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 8, 8})}), ShapeError);
  EXPECT_THROW(FeaturePyramid({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 2, 2})}), ShapeError);
  EXPECT_THROW(FeaturePyramid({}), ShapeError);
}

TEST(ShapeLaws, StagesKeepBranchResolution) {
  const ParallelStageState first({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 4, 4})});
  EXPECT_NO_THROW(ParallelStageState({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 4, 4})}, &first));
  EXPECT_THROW(ParallelStageState({Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 2, 2, 2})}, &first), ShapeError);
  EXPECT_THROW(ParallelStageState({Tensor::zeros({1, 2, 8, 8})}, &first), ShapeError);
}

TEST(ExchangeUnit, ZeroTransformsReduceToIdentity) {
  Rng rng(2);
  ParameterStore store;
  ExchangeUnit unit(store, "x", 3, 4, rng);
  for (Tensor& p : unit.transform_parameters()) std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  const std::vector<Tensor> in{random_normal({1, 4, 8, 8}, rng), random_normal({1, 4, 4, 4}, rng),
                               random_normal({1, 4, 2, 2}, rng)};
  const auto out = unit.forward(in);
  for (std::size_t b = 0; b < 3; ++b) {
    ASSERT_EQ(out[b].shape(), in[b].shape());
    for (std::size_t i = 0; i < in[b].numel(); ++i) EXPECT_EQ(out[b].at(i), in[b].at(i));
  }
}

TEST(ExchangeUnit, UsesOneDownsampleConvPerHalving) {
  Rng rng(3);
  ParameterStore store;
  ExchangeUnit unit(store, "x", 3, 2, rng);
  // 3 branches: 0->1, 1->2 (one conv each), 0->2 (two convs), plus 3 upsample 1x1s.
  // Each conv has a weight and a bias.
  EXPECT_EQ(unit.transform_parameters().size(), 2u * (1 + 1 + 2 + 3));
}

TEST(Apm, ScalesChannelsBySigmoidWeights) {
  Rng rng(4);
  ParameterStore store;
  Apm apm(store, "apm", 3, rng);
  Tensor f = random_normal({2, 3, 4, 4}, rng);
  const Tensor w = apm.channel_weights(f);
  ASSERT_EQ(w.numel(), 6u);
  const Tensor u = apm.forward(f);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      const double s = w.at(b * 3 + c);
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
      for (std::size_t i = 0; i < 16; ++i) {
        const std::size_t idx = (b * 3 + c) * 16 + i;
        EXPECT_NEAR(u.at(idx), f.at(idx) * s, 1e-12);
      }
    }
}

TEST(DilatedBottleneck, PreservesShapeAcrossDilations) {
  Rng rng(5);
  for (int d : {1, 2, 3}) {
    ParameterStore store;
    DilatedBottleneck block(store, "db", 6, d, rng);
    Tensor x = random_normal({1, 6, 9, 7}, rng);
    EXPECT_EQ(block.forward(x, Mode::kTrain).shape(), x.shape());
  }
}

TEST(P2Net, SeededConstructionIsDeterministic) {
  const NetworkConfig cfg = tiny({4, 8}, 1, 4, 16);
  P2Net a(cfg, 3), b(cfg, 3), c(cfg, 4);
  EXPECT_EQ(a.store().snapshot(), b.store().snapshot());
  EXPECT_NE(a.store().snapshot(), c.store().snapshot());
}

TEST(P2Net, ReferencePresetValidates) {
  EXPECT_NO_THROW(NetworkConfig::reference_scale().validate());
}

TEST(Checkpoint, StoreExportImportRoundTrip) {
  const NetworkConfig cfg = tiny({4, 8}, 1, 4, 16);
  P2Net a(cfg, 3), b(cfg, 9);
  b.store().import_arrays(a.store().export_arrays());
  EXPECT_EQ(a.store().snapshot(), b.store().snapshot());
}

}  // namespace
}  // namespace p2net
