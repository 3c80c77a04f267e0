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
#include "p2net/augment.hpp"
#include "p2net/errors.hpp"
#include "p2net/policy_io.hpp"

namespace p2net {
namespace {

Image random_image(Rng& rng, int w, int h, int c, int levels = 256) {
  Image im(w, h, c);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, levels) * (256 / levels));
  return im;
}

Sample blank_sample(int w, int h, std::vector<Point> kps) {
  Sample s;
  s.id = "s";
  s.image = Image(w, h, 3, kFillValue);
  s.visibility.assign(kps.size(), 2);
  s.keypoints = std::move(kps);
  s.bbox = {0, 0, static_cast<double>(w), static_cast<double>(h)};
  s.head_size = 10.0;
  return s;
}

TEST(Augment, EqualizeMatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const int levels = trial % 2 == 0 ? 256 : 8;
    const Image im = random_image(rng, 9 + trial, 7, 3, levels);
    const Image out = apply_photometric(im, AugKind::kEqualize, 0.0, rng);
    for (int c = 0; c < 3; ++c) {
      const auto want = oracle::equalize_channel(im.pixels, 3, c);
      for (std::size_t i = 0; i < want.size(); ++i) ASSERT_EQ(out.pixels[i * 3 + c], want[i]);
    }
  }
}

TEST(Augment, EqualizeConstantChannelIsIdentity) {
  Rng rng(2);
  Image im(5, 5, 1, 77);
  EXPECT_EQ(apply_photometric(im, AugKind::kEqualize, 0.0, rng), im);
}

TEST(Augment, BrightnessMidMagnitudeIsIdentity) {
  Rng rng(3);
  const Image im = random_image(rng, 11, 13, 3);
  const double factor = denormalize(AugKind::kBrightness, 5.0);
  EXPECT_EQ(factor, 1.0);
  EXPECT_EQ(apply_photometric(im, AugKind::kBrightness, factor, rng), im);
}

TEST(Augment, SolarizeInvertsAboveThreshold) {
  Rng rng(4);
  const Image im = random_image(rng, 16, 16, 3);
  const Image out = apply_photometric(im, AugKind::kSolarize, 100.0, rng);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) {
    const int p = im.pixels[i];
    EXPECT_EQ(out.pixels[i], p > 100 ? 255 - p : p);
  }
  EXPECT_EQ(apply_photometric(im, AugKind::kSolarize, 256.0, rng), im);
}

TEST(Augment, SolarizeAddOnlyTouchesDarkPixels) {
  Rng rng(5);
  const Image im = random_image(rng, 16, 16, 1);
  const Image out = apply_photometric(im, AugKind::kSolarizeAdd, 50.0, rng);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) {
    const int p = im.pixels[i];
    EXPECT_EQ(out.pixels[i], p < 128 ? std::min(255, p + 50) : p);
  }
}

TEST(Augment, CutoutPaintsGraySquare) {
  Rng rng(6);
  const Image im(20, 20, 1, 0);
  const Image out = apply_photometric(im, AugKind::kCutout, 6.0, rng);
  int gray = 0;
  for (auto p : out.pixels) gray += p == kFillValue ? 1 : 0;
  EXPECT_GT(gray, 0);
  EXPECT_LE(gray, 36);
}

TEST(Augment, TranslateMovesKeypointsExactly) {
  const Sample s = blank_sample(32, 32, {{10, 12}, {31, 5}});
  const Sample t = apply_geometric(s, AugKind::kTranslateX, 3.0);
  EXPECT_EQ(t.keypoints[0], (Point{13, 12}));
  EXPECT_EQ(t.visibility[1], 0);  // pushed out of frame
  const Sample u = apply_geometric(s, AugKind::kTranslateY, -2.0);
  EXPECT_EQ(u.keypoints[0], (Point{10, 10}));
}

TEST(Augment, GeometricOpsKeepMarkersOnKeypoints) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const AugKind kind = std::array{AugKind::kTranslateX, AugKind::kTranslateY, AugKind::kRotate,
                                    AugKind::kScale}[trial % 4];
    const double param = kind == AugKind::kRotate ? uniform(rng, -45, 45)
                         : kind == AugKind::kScale ? uniform(rng, 0.7, 1.35)
                                                   : uniform(rng, -8, 8);
    const Point p{std::round(uniform(rng, 12, 36)), std::round(uniform(rng, 12, 36))};
    Sample s = blank_sample(48, 48, {p});
    s.image.at(static_cast<int>(p.x), static_cast<int>(p.y), 0) = 255;
    const Sample t = apply_geometric(s, kind, kind == AugKind::kTranslateX || kind == AugKind::kTranslateY
                                                  ? std::round(param) : param);
    double cx = 0, cy = 0;
    ASSERT_TRUE(oracle::marker_centroid(t.image.pixels, 48, 48, 3, kFillValue, cx, cy));
    EXPECT_LE(std::hypot(cx - t.keypoints[0].x, cy - t.keypoints[0].y), 1.0)
        << to_string(kind) << " param " << param;
  }
}

TEST(Augment, IdentityPolicyLeavesSamplesUntouched) {
  Rng rng(8);
  std::vector<Sample> batch{blank_sample(16, 16, {{3, 4}})};
  batch[0].image = random_image(rng, 16, 16, 3);
  EXPECT_EQ(apply_policy(batch, identity_policy(), rng), batch);
}

TEST(Augment, InvalidSpecsAreRejected) {
  EXPECT_THROW((AugOpSpec{AugKind::kRotate, 1.5, 3.0}.validate()), ContractError);
  EXPECT_THROW((AugOpSpec{AugKind::kRotate, 0.5, 11.0}.validate()), ContractError);
  EXPECT_THROW(aug_kind_from_string("Blur"), ContractError);
}

TEST(PolicyIo, JsonRoundTrip) {
  Policy p;
  p.sub_policies.push_back({{{AugKind::kRotate, 0.25, 7.5}, {AugKind::kEqualize, 1.0, 0.0}}});
  p.sub_policies.push_back({{{AugKind::kCutout, 0.5, 2.5}}});
  EXPECT_EQ(policy_from_json(policy_to_json(p)), p);
}

}  // namespace
}  // namespace p2net
