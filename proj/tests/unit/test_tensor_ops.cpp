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
#include <vector>

#include "p2net/errors.hpp"
#include "p2net/gradcheck.hpp"
#include "p2net/gradcheck_suite.hpp"
#include "p2net/ops.hpp"
#include "p2net/random.hpp"
#include "p2net/tensor.hpp"

namespace p2net {
namespace {

std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Direct nested-loop convolution with "same" padding and ceil division.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                               int dilation) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const long ph = dilation * static_cast<long>(KH - 1) / 2;
  const long pw = dilation * static_cast<long>(KW - 1) / 2;
  const std::size_t OH = (H + stride - 1) / stride, OW = (W + stride - 1) / stride;
  std::vector<double> out(B * O * OH * OW, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = b.defined() ? b.at(o) : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(oy) * stride + static_cast<long>(ky) * dilation - ph;
                const long ix = static_cast<long>(ox) * stride + static_cast<long>(kx) * dilation - pw;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += x.at(((n * C + c) * H + iy) * W + ix) * w.at(((o * C + c) * KH + ky) * KW + kx);
              }
          out[((n * O + o) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

TEST(Tensor, FactoriesAndShapes) {
  Tensor t = Tensor::full({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_DOUBLE_EQ(t.at(4), 1.5);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ContractError);
  EXPECT_DOUBLE_EQ(Tensor::scalar(3.0).item(), 3.0);
}

TEST(Ops, ConvMatchesNaiveLoops) {
  Rng rng(3);
  for (int stride : {1, 2}) {
    for (int dilation : {1, 2}) {
      Tensor x = random_normal({2, 3, 7, 6}, rng);
      Tensor w = random_normal({4, 3, 3, 3}, rng);
      Tensor b = random_normal({4}, rng);
      const auto got = to_vec(conv2d(x, w, b, stride, dilation));
      const auto want = naive_conv(x, w, b, stride, dilation);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
  }
}

TEST(Ops, NearestUpsampleExample) {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = to_vec(nearest_upsample(x, 2));
  const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y, want);
  EXPECT_THROW(nearest_upsample(x, 0), ContractError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(5);
  Tensor x = random_normal({3, 7}, rng, 10.0);
  const auto y = to_vec(softmax(x));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(y[r * 7 + c], 0.0);
      s += y[r * 7 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, ShapeMismatchIsAContractError) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor()), ShapeError);
}

TEST(Ops, ScalarBroadcastInMul) {
  Tensor k = Tensor::from_data({1}, {3.0});
  Tensor x = Tensor::from_data({1, 1}, {2.0});
  EXPECT_DOUBLE_EQ(mul(k, x).item(), 6.0);
  EXPECT_EQ(mul(Tensor::scalar(2.0), Tensor::full({2, 2}, 1.0)).numel(), 4u);
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor y = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  backward(y);
  const std::vector<double> want{3, 5, 7};
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), want);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = sum(square(x));
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, BatchNormEvalUsesRunningStats) {
  BatchNormBuffers buffers(2);
  Tensor x = Tensor::from_data({1, 2, 1, 2}, {1, 2, 3, 4});
  Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
  const auto y = to_vec(batch_norm(x, g, b, buffers, BatchNormMode::kEval));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x.at(i) / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(Gradcheck, DetectsCorruptedBackward) {
  // A relu-like op whose backward forgets to gate negative inputs.
  Rng rng(11);
  Tensor x = random_normal({2, 5}, rng, 1.0, true);
  auto broken = [](const Tensor& in) {
    std::vector<double> out(in.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, in.at(i));
    TensorStorage* s = in.storage().get();
    return make_op_result("broken_relu", in.shape(), out, {in}, [s](std::span<const double> g) {
      auto dst = work_buffer(s);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  };
  Tensor w = random_normal({2, 5}, rng);
  const GradcheckOutcome bad = check_gradients(
      [&] { return project_to_scalar(broken(x), w); }, {x}, rng);
  EXPECT_GT(bad.relative_error, 1e-3);
  const GradcheckOutcome good = check_gradients(
      [&] { return project_to_scalar(relu(x), w); }, {x}, rng);
  EXPECT_LT(good.relative_error, 1e-5);
}

TEST(Gradcheck, EveryRegisteredFamilyPasses) {
  for (const FamilyReport& r : run_gradcheck_suite(4, 99)) {
    EXPECT_TRUE(r.passed()) << r.name << " max error " << r.max_error;
  }
}

TEST(Random, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(hash_label("train"), hash_label("val"));
}

}  // namespace
}  // namespace p2net
