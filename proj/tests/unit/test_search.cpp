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

#include <cmath>

#include "../support/oracles.hpp"
#include "p2net/errors.hpp"
#include "p2net/gradcheck.hpp"
#include "p2net/ops.hpp"
#include "p2net/search.hpp"
#include "p2net/synth.hpp"

namespace p2net {
namespace {

BilevelObjective bilinear_toy(Tensor& a, Tensor& w, double x) {
  return BilevelObjective::from_losses(
      {w}, {a}, [a, w, x] { return scalar_mul(mul(a, w), x); },
      [w] { return scalar_mul(square(w), 0.5); });
}

TEST(Hypergradient, BilinearToyMatchesClosedForm) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const double av = uniform(rng, -2, 2), wv = uniform(rng, -2, 2), x = uniform(rng, -2, 2);
    const double zeta = uniform(rng, 0.01, 0.5);
    Tensor a = Tensor::from_data({1}, {av}, true);
    Tensor w = Tensor::from_data({1}, {wv}, true);
    BilevelObjective obj = bilinear_toy(a, w, x);
    const Hypergradient hg = hypergradient(obj, zeta, 0.01);
    EXPECT_NEAR(hg.alpha_grad[0][0], oracle::bilinear_hypergradient(av, wv, x, zeta), 1e-6);
    // Parameters are restored after the finite-difference probes.
    EXPECT_EQ(w.at(0), wv);
  }
}

TEST(Hypergradient, ZeroZetaGivesExactZero) {
  Tensor a = Tensor::from_data({1}, {0.7}, true);
  Tensor w = Tensor::from_data({1}, {-1.3}, true);
  BilevelObjective obj = bilinear_toy(a, w, 0.9);
  const Hypergradient hg = hypergradient(obj, 0.0, 0.01);
  EXPECT_EQ(hg.alpha_grad[0][0], 0.0);
}

TEST(Hypergradient, InnerStepIsPlainGradientDescent) {
  Tensor a = Tensor::from_data({1}, {2.0}, true);
  Tensor w = Tensor::from_data({1}, {1.0}, true);
  BilevelObjective obj = bilinear_toy(a, w, 3.0);
  const InnerStep s = inner_step(obj, 0.1);
  EXPECT_NEAR(s.omega_prime[0][0], 1.0 - 0.1 * 6.0, 1e-15);
  EXPECT_NEAR(s.train_loss, 6.0, 1e-15);
}

TEST(Alpha, ZeroInitGivesUniformWeights) {
  const Alpha alpha(3, 2, 5);
  for (std::size_t s = 0; s < alpha.slots(); ++s) {
    for (double w : alpha.weights(s)) EXPECT_DOUBLE_EQ(w, 0.2);
    EXPECT_DOUBLE_EQ(alpha.probability(s), 0.5);
    EXPECT_NEAR(alpha.entropy(s), std::log(5.0), 1e-12);
  }
}

TEST(Alpha, DiscretizeTakesRowArgmax) {
  const CandidateSet cs = CandidateSet::from_bins({AugKind::kRotate, AugKind::kBrightness}, {5.0});
  Alpha alpha(1, 2, cs.size());
  auto l = alpha.logits().mutable_data();
  l[1] = 1.0;   // slot 0 -> Brightness
  l[2] = 0.5;   // slot 1 -> Rotate
  const Policy p = discretize(alpha, cs);
  ASSERT_EQ(p.sub_policies.size(), 1u);
  EXPECT_EQ(p.sub_policies[0].ops[0].kind, AugKind::kBrightness);
  EXPECT_EQ(p.sub_policies[0].ops[1].kind, AugKind::kRotate);
  EXPECT_DOUBLE_EQ(p.sub_policies[0].ops[1].probability, 0.5);
  EXPECT_THROW(discretize(Alpha(1, 1, 3), cs), ShapeError);
}

TEST(CandidateSet, DefaultHasMagnitudeBinsPlusEqualize) {
  const CandidateSet cs = CandidateSet::default_set();
  EXPECT_EQ(cs.size(), 28u);
  EXPECT_EQ(cs.label(0).find('@') != std::string::npos, true);
}

TEST(RelaxedLoss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor row = random_normal({4}, rng, 1.0, true);
    Tensor p = random_normal({1}, rng, 1.0, true);
    std::vector<Tensor> losses;
    for (int i = 0; i < 4; ++i) losses.push_back(Tensor::scalar(uniform(rng, 0, 2)));
    Tensor id = Tensor::scalar(uniform(rng, 0, 2));
    const GradcheckOutcome r =
        check_gradients([&] { return relaxed_loss(row, p, losses, id); }, {row, p}, rng);
    EXPECT_LT(r.relative_error, 1e-4);
  }
}

TEST(RelaxedLoss, ZeroProbabilityLogitHalfMixes) {
  Tensor row = Tensor::zeros({2}, true);
  Tensor p = Tensor::zeros({1}, true);
  const double v =
      relaxed_loss(row, p, {Tensor::scalar(1.0), Tensor::scalar(3.0)}, Tensor::scalar(0.0)).item();
  EXPECT_NEAR(v, 0.5 * 2.0, 1e-15);
}

class SearchRun : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthConfig sc;
    sc.image_width = sc.image_height = 32;
    train = synth_split(sc, "train", 16, 1);
    val = synth_split(sc, "val", 8, 1);
    net_cfg.input_height = net_cfg.input_width = 32;
    net_cfg.backbone_widths = {4, 8};
    net_cfg.pyramid_width = 4;
    net_cfg.parallel_stages = 1;
    cfg.candidates = CandidateSet::from_bins({AugKind::kRotate, AugKind::kBrightness}, {5.0, 10.0});
    cfg.sub_policies = 2;
    cfg.positions = 2;
    cfg.batch_size = 2;
    cfg.val_batch_size = 2;
  }
  std::vector<Sample> train, val;
  NetworkConfig net_cfg;
  SearchConfig cfg;
};

TEST_F(SearchRun, ZeroBudgetReturnsInitialAlpha) {
  P2Net net(net_cfg, 1);
  cfg.budget = 0;
  PolicySearch search(net, train, val, cfg, 5);
  const auto records = search.run();
  EXPECT_EQ(records.size(), 1u);
  for (double l : search.alpha().logits().data()) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(search.policy().sub_policies.size(), 2u);
}

TEST_F(SearchRun, StepsAreDeterministicAndMoveAlpha) {
  cfg.budget = 2;
  std::vector<double> logits[2];
  for (int run = 0; run < 2; ++run) {
    P2Net net(net_cfg, 1);
    PolicySearch search(net, train, val, cfg, 5);
    search.run();
    logits[run].assign(search.alpha().logits().data().begin(), search.alpha().logits().data().end());
  }
  EXPECT_EQ(logits[0], logits[1]);
  bool moved = false;
  for (double l : logits[0]) moved |= l != 0.0;
  EXPECT_TRUE(moved);
}

TEST_F(SearchRun, OverlappingSplitsAreRejected) {
  P2Net net(net_cfg, 1);
  EXPECT_THROW(PolicySearch(net, train, train, cfg, 5), ContractError);
}

}  // namespace
}  // namespace p2net
