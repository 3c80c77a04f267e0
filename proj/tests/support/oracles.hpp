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

// Independent reference implementations used by unit and acceptance tests.
// None of these call into the library code they are compared against.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace p2net::oracle {

// Direct Gaussian keypoint similarity, written as a product of the
// normalized distance rather than the ratio form used by the library.
inline bool oks_direct(const std::vector<double>& px, const std::vector<double>& py,
                       const std::vector<double>& gx, const std::vector<double>& gy,
                       const std::vector<int>& vis, const std::vector<double>& k, double s,
                       double& out) {
  long double num = 0.0L;
  long double den = 0.0L;
  for (std::size_t i = 0; i < vis.size(); ++i) {
    if (!(vis[i] > 0)) continue;
    const long double u = static_cast<long double>(px[i] - gx[i]) / (s * k[i]);
    const long double v = static_cast<long double>(py[i] - gy[i]) / (s * k[i]);
    num += std::exp(-0.5L * (u * u + v * v));
    den += 1.0L;
  }
  if (den == 0.0L) return false;
  out = static_cast<double>(num / den);
  return true;
}

// Brute-force histogram equalization of one interleaved channel: for every
// pixel, count how many pixels are <= it, then apply the rounded lookup.
inline std::vector<std::uint8_t> equalize_channel(const std::vector<std::uint8_t>& pixels,
                                                  int channels, int channel) {
  const std::size_t n = pixels.size() / static_cast<std::size_t>(channels);
  auto value = [&](std::size_t i) { return pixels[i * channels + channel]; };
  std::size_t cdf_min = n;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t below = 0;
    for (std::size_t j = 0; j < n; ++j) below += value(j) <= value(i) ? 1 : 0;
    if (below < cdf_min) cdf_min = below;
  }
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cdf_min == n) {
      out[i] = value(i);
      continue;
    }
    std::size_t below = 0;
    for (std::size_t j = 0; j < n; ++j) below += value(j) <= value(i) ? 1 : 0;
    const double r = 255.0 * static_cast<double>(below - cdf_min) / static_cast<double>(n - cdf_min);
    out[i] = static_cast<std::uint8_t>(std::lround(r));
  }
  return out;
}

// Hypergradient of L_train = a*w*x, L_val = w^2/2 through one inner step:
// w' = w - zeta*a*x and d/da L_val(w') reduces to -zeta*x*w'.
inline double bilinear_hypergradient(double a, double w, double x, double zeta) {
  const double w_prime = w - zeta * a * x;
  return -zeta * x * w_prime;
}

// Intensity-weighted centroid of channel 0 above a flat background level.
// Returns false when no pixel rises above the background.
inline bool marker_centroid(const std::vector<std::uint8_t>& pixels, int width, int height,
                            int channels, int background, double& cx, double& cy) {
  double mass = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int v = pixels[(static_cast<std::size_t>(y) * width + x) * channels];
      if (v <= background) continue;
      mass += v - background;
      sx += (v - background) * static_cast<double>(x);
      sy += (v - background) * static_cast<double>(y);
    }
  }
  if (mass == 0.0) return false;
  cx = sx / mass;
  cy = sy / mass;
  return true;
}

}  // namespace p2net::oracle
