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

#include "p2net/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "p2net/errors.hpp"

namespace p2net {

HeatmapSet::HeatmapSet(std::size_t b, std::size_t k, std::size_t h, std::size_t w, int stride_)
    : batch(b), keypoints(k), height(h), width(w), stride(stride_), values(b * k * h * w, 0.0) {}

HeatmapSet HeatmapSet::from_tensor(const Tensor& t, int stride) {
  if (t.rank() != 4) throw ShapeError("HeatmapSet: tensor must be [B, K, h, w]");
  HeatmapSet hm(t.dim(0), t.dim(1), t.dim(2), t.dim(3), stride);
  std::copy(t.data().begin(), t.data().end(), hm.values.begin());
  return hm;
}

void FlipSpec::validate(std::size_t keypoints) const {
  std::vector<bool> seen(keypoints, false);
  for (const auto& [a, b] : pairs) {
    if (a >= keypoints || b >= keypoints) {
      throw ContractError("flip pair (" + std::to_string(a) + ", " + std::to_string(b) +
                          ") is out of range for " + std::to_string(keypoints) + " keypoints");
    }
    if (a == b || seen[a] || seen[b]) {
      throw ContractError("flip pairs must be disjoint; offending pair (" + std::to_string(a) +
                          ", " + std::to_string(b) + ")");
    }
    seen[a] = seen[b] = true;
  }
}

std::vector<std::size_t> FlipSpec::permutation(std::size_t keypoints) const {
  validate(keypoints);
  std::vector<std::size_t> perm(keypoints);
  std::iota(perm.begin(), perm.end(), 0);
  for (const auto& [a, b] : pairs) std::swap(perm[a], perm[b]);
  return perm;
}

DecodedKeypoint decode_channel(const double* channel, std::size_t height, std::size_t width,
                               int stride) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < height * width; ++i) {
    if (channel[i] > channel[best]) best = i;
  }
  const std::size_t bx = best % width;
  const std::size_t by = best / width;
  auto quarter = [](double lo, double hi) {
    if (hi > lo) return 0.25;
    if (hi < lo) return -0.25;
    return 0.0;
  };
  double x = static_cast<double>(bx);
  double y = static_cast<double>(by);
  if (bx > 0 && bx + 1 < width) {
    x += quarter(channel[by * width + bx - 1], channel[by * width + bx + 1]);
  }
  if (by > 0 && by + 1 < height) {
    y += quarter(channel[(by - 1) * width + bx], channel[(by + 1) * width + bx]);
  }
  return {x * stride, y * stride, channel[best]};
}

std::vector<std::vector<DecodedKeypoint>> decode(const HeatmapSet& hm) {
  std::vector<std::vector<DecodedKeypoint>> out(hm.batch);
  const std::size_t plane = hm.height * hm.width;
  for (std::size_t b = 0; b < hm.batch; ++b) {
    for (std::size_t k = 0; k < hm.keypoints; ++k) {
      out[b].push_back(decode_channel(hm.values.data() + (b * hm.keypoints + k) * plane,
                                      hm.height, hm.width, hm.stride));
    }
  }
  return out;
}

HeatmapSet gaussian_smooth(const HeatmapSet& hm, double sigma, int radius) {
  if (sigma <= 0.0 || radius < 0) throw ContractError("gaussian_smooth: bad kernel parameters");
  std::vector<double> taps(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) taps[i + radius] = std::exp(-(i * i) / (2 * sigma * sigma));
  const auto h = static_cast<long>(hm.height);
  const auto w = static_cast<long>(hm.width);
  HeatmapSet tmp = hm;
  HeatmapSet out = hm;
  const std::size_t plane = hm.height * hm.width;
  for (std::size_t c = 0; c < hm.batch * hm.keypoints; ++c) {
    const double* src = hm.values.data() + c * plane;
    double* mid = tmp.values.data() + c * plane;
    double* dst = out.values.data() + c * plane;
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0, norm = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          if (x + i < 0 || x + i >= w) continue;
          acc += taps[i + radius] * src[y * w + x + i];
          norm += taps[i + radius];
        }
        mid[y * w + x] = acc / norm;
      }
    }
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0, norm = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          if (y + i < 0 || y + i >= h) continue;
          acc += taps[i + radius] * mid[(y + i) * w + x];
          norm += taps[i + radius];
        }
        dst[y * w + x] = acc / norm;
      }
    }
  }
  return out;
}

HeatmapSet flip_horizontal(const HeatmapSet& hm) {
  HeatmapSet out = hm;
  for (std::size_t b = 0; b < hm.batch; ++b) {
    for (std::size_t k = 0; k < hm.keypoints; ++k) {
      for (std::size_t y = 0; y < hm.height; ++y) {
        for (std::size_t x = 0; x < hm.width; ++x) {
          out.at(b, k, y, x) = hm.at(b, k, y, hm.width - 1 - x);
        }
      }
    }
  }
  return out;
}

HeatmapSet swap_channels(const HeatmapSet& hm, const FlipSpec& fs) {
  const auto perm = fs.permutation(hm.keypoints);
  HeatmapSet out = hm;
  const std::size_t plane = hm.height * hm.width;
  for (std::size_t b = 0; b < hm.batch; ++b) {
    for (std::size_t k = 0; k < hm.keypoints; ++k) {
      std::copy_n(hm.values.begin() + static_cast<long>((b * hm.keypoints + perm[k]) * plane),
                  plane, out.values.begin() + static_cast<long>((b * hm.keypoints + k) * plane));
    }
  }
  return out;
}

HeatmapSet shift_columns(const HeatmapSet& hm, double offset) {
  HeatmapSet out = hm;
  if (offset == 0.0 || hm.width == 0) return out;
  const double last = static_cast<double>(hm.width - 1);
  for (std::size_t b = 0; b < hm.batch; ++b) {
    for (std::size_t k = 0; k < hm.keypoints; ++k) {
      for (std::size_t y = 0; y < hm.height; ++y) {
        for (std::size_t x = 0; x < hm.width; ++x) {
          const double src = std::clamp(static_cast<double>(x) + offset, 0.0, last);
          const auto x0 = static_cast<std::size_t>(std::floor(src));
          const std::size_t x1 = std::min(x0 + 1, hm.width - 1);
          const double f = src - static_cast<double>(x0);
          out.at(b, k, y, x) = (1.0 - f) * hm.at(b, k, y, x0) + f * hm.at(b, k, y, x1);
        }
      }
    }
  }
  return out;
}

double flip_alignment_offset(int image_width, int stride, std::size_t heatmap_width) {
  return static_cast<double>(heatmap_width - 1) - static_cast<double>(image_width - 1) / stride;
}

HeatmapSet flip_average(const HeatmapSet& hm, const HeatmapSet& hm_flipped, const FlipSpec& fs) {
  if (!hm.same_shape(hm_flipped)) throw ShapeError("flip_average: heatmap shapes differ");
  const HeatmapSet restored = swap_channels(flip_horizontal(hm_flipped), fs);
  HeatmapSet out = hm;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = 0.5 * (hm.values[i] + restored.values[i]);
  }
  return out;
}

std::optional<double> oks(const std::vector<Point>& pred, const std::vector<Point>& gt,
                          const std::vector<int>& visibility, const OksContext& ctx) {
  if (pred.size() != gt.size() || gt.size() != visibility.size() || ctx.k.size() != gt.size()) {
    throw ShapeError("oks: keypoint counts differ");
  }
  if (ctx.scale <= 0.0) throw ContractError("oks: scale must be positive");
  double total = 0.0;
  std::size_t visible = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (visibility[i] <= 0) continue;
    if (ctx.k[i] <= 0.0) throw ContractError("oks: k constants must be positive");
    const double dx = pred[i].x - gt[i].x;
    const double dy = pred[i].y - gt[i].y;
    const double denom = 2.0 * ctx.scale * ctx.scale * ctx.k[i] * ctx.k[i];
    total += std::exp(-(dx * dx + dy * dy) / denom);
    ++visible;
  }
  if (visible == 0) return std::nullopt;
  return total / static_cast<double>(visible);
}

std::vector<double> oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

ApResult ap_ar(const std::vector<ImageMatches>& images) {
  std::size_t total_gt = 0;
  for (const ImageMatches& im : images) {
    if (im.oks.size() != im.scores.size()) throw ShapeError("ap_ar: score/oks counts differ");
    for (const auto& row : im.oks) {
      if (row.size() != im.ground_truths) throw ShapeError("ap_ar: oks row length mismatch");
    }
    total_gt += im.ground_truths;
  }
  ApResult result;
  for (const double threshold : oks_thresholds()) {
    struct Hit {
      double score;
      bool tp;
    };
    std::vector<Hit> hits;
    for (const ImageMatches& im : images) {
      std::vector<std::size_t> order(im.scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return im.scores[a] > im.scores[b]; });
      std::vector<bool> taken(im.ground_truths, false);
      for (std::size_t p : order) {
        std::size_t best = im.ground_truths;
        double best_oks = threshold;
        for (std::size_t g = 0; g < im.ground_truths; ++g) {
          if (taken[g] || im.oks[p][g] < best_oks) continue;
          if (best == im.ground_truths || im.oks[p][g] > im.oks[p][best]) best = g;
          best_oks = im.oks[p][best];
        }
        if (best < im.ground_truths) taken[best] = true;
        hits.push_back({im.scores[p], best < im.ground_truths});
      }
    }
    std::stable_sort(hits.begin(), hits.end(),
                     [](const Hit& a, const Hit& b) { return a.score > b.score; });
    std::vector<double> precision, recall;
    double tp = 0.0, fp = 0.0;
    for (const Hit& h : hits) {
      (h.tp ? tp : fp) += 1.0;
      precision.push_back(tp / (tp + fp));
      recall.push_back(total_gt > 0 ? tp / static_cast<double>(total_gt) : 0.0);
    }
    for (std::size_t i = precision.size(); i-- > 1;) {
      precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0.0;
    if (total_gt > 0) {
      for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) ap += precision[static_cast<std::size_t>(it - recall.begin())];
      }
      ap /= 101.0;
    }
    result.ap_per_threshold.push_back(ap);
    result.recall_per_threshold.push_back(recall.empty() ? 0.0 : recall.back());
  }
  const double n = static_cast<double>(result.ap_per_threshold.size());
  result.ap = std::accumulate(result.ap_per_threshold.begin(), result.ap_per_threshold.end(), 0.0) / n;
  result.ar =
      std::accumulate(result.recall_per_threshold.begin(), result.recall_per_threshold.end(), 0.0) /
      n;
  result.ap50 = result.ap_per_threshold[0];
  result.ap75 = result.ap_per_threshold[5];
  return result;
}

PckhResult pckh(const std::vector<std::vector<Point>>& pred,
                const std::vector<std::vector<Point>>& gt,
                const std::vector<std::vector<int>>& visibility,
                const std::vector<double>& head_sizes, double thresh) {
  if (pred.size() != gt.size() || gt.size() != visibility.size() ||
      gt.size() != head_sizes.size()) {
    throw ShapeError("pckh: instance counts differ");
  }
  const std::size_t k = gt.empty() ? 0 : gt.front().size();
  std::vector<double> correct(k, 0.0), seen(k, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (head_sizes[i] <= 0.0) throw ContractError("pckh: head size must be positive");
    if (pred[i].size() != k || gt[i].size() != k || visibility[i].size() != k) {
      throw ShapeError("pckh: keypoint counts differ");
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (visibility[i][j] <= 0) continue;
      seen[j] += 1.0;
      const double d = std::hypot(pred[i][j].x - gt[i][j].x, pred[i][j].y - gt[i][j].y);
      if (d <= thresh * head_sizes[i]) correct[j] += 1.0;
    }
  }
  PckhResult result;
  double hit = 0.0, all = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    result.per_keypoint.push_back(seen[j] > 0.0 ? correct[j] / seen[j]
                                                : std::numeric_limits<double>::quiet_NaN());
    hit += correct[j];
    all += seen[j];
  }
  result.visible = static_cast<std::size_t>(all);
  result.total = all > 0.0 ? hit / all : 0.0;
  return result;
}

double instance_score(double detection_score, const std::vector<DecodedKeypoint>& keypoints) {
  if (keypoints.empty()) return 0.0;
  double acc = 0.0;
  for (const DecodedKeypoint& kp : keypoints) acc += kp.confidence;
  return detection_score * acc / static_cast<double>(keypoints.size());
}

}  // namespace p2net
