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

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   p2net_acceptance [--work DIR] [N ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "../support/oracles.hpp"
#include "p2net/augment.hpp"
#include "p2net/config.hpp"
#include "p2net/errors.hpp"
#include "p2net/experiment.hpp"
#include "p2net/gradcheck_suite.hpp"
#include "p2net/losses.hpp"
#include "p2net/metrics.hpp"
#include "p2net/network.hpp"
#include "p2net/search.hpp"

#ifndef P2NET_SOURCE_DIR
#error "P2NET_SOURCE_DIR must point at the repository root"
#endif

namespace fs = std::filesystem;
using namespace p2net;

namespace {

// Pinned tolerances and thresholds.
constexpr double kGradTolerance = 1e-5;
constexpr std::size_t kGradInstances = 20;
constexpr double kGradBudgetSeconds = 300.0;
constexpr double kOksTolerance = 1e-12;
constexpr double kOhkmTolerance = 1e-12;
constexpr double kMarkerTolerancePx = 1.0;
constexpr double kDecodeMaeCells = 0.3;
constexpr double kHyperTolerance = 1e-6;
constexpr int kSearchRunsRequired = 2;
constexpr double kSearchBudgetSeconds = 30.0 * 60.0;
constexpr double kLossDropFactor = 5.0;
constexpr double kPckhTarget = 0.8;
constexpr double kTrainBudgetSeconds = 2.0 * 3600.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path g_work;

fs::path work_dir(const std::string& name) {
  const fs::path dir = g_work / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path config_path(const std::string& name) {
  return fs::path(P2NET_SOURCE_DIR) / "configs" / name;
}

// 1 --------------------------------------------------------------------
Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  const auto reports = run_gradcheck_suite(kGradInstances, 2024, kGradTolerance);
  const double secs = seconds_since(t0);
  std::vector<std::string> required{"apm", "exchange_unit", "dilated_bottleneck", "p2net"};
  double worst = 0.0;
  std::size_t min_instances = kGradInstances;
  bool ok = true;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_error);
    min_instances = std::min(min_instances, r.instances);
    if (!r.passed()) {
      ok = false;
      std::fprintf(stderr, "  family %s failed: %zu/%zu, max error %.3g\n", r.name.c_str(),
                   r.failures, r.instances, r.max_error);
    }
    std::erase(required, r.name);
  }
  ok = ok && required.empty() && min_instances >= kGradInstances && secs < kGradBudgetSeconds;
  return {ok, fmt::format("{} families x {} instances, max rel err {:.2e} (< {:.0e}), {:.1f}s (< {:.0f}s)",
                          reports.size(), min_instances, worst, kGradTolerance, secs,
                          kGradBudgetSeconds)};
}

// 2 --------------------------------------------------------------------
Verdict oks_oracle() {
  Rng rng(7);
  double worst = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 17);
    std::vector<Point> p(n), g(n);
    std::vector<double> px(n), py(n), gx(n), gy(n), k(n);
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = {uniform(rng, 0, 200), uniform(rng, 0, 200)};
      p[i] = {g[i].x + normal(rng, 0, 8), g[i].y + normal(rng, 0, 8)};
      px[i] = p[i].x, py[i] = p[i].y, gx[i] = g[i].x, gy[i] = g[i].y;
      k[i] = uniform(rng, 0.025, 0.11);
      v[i] = trial % 10 == 0 ? 0 : static_cast<int>(uniform_index(rng, 3));
    }
    const double s = uniform(rng, 5, 150);
    double want = 0.0;
    const bool any = oracle::oks_direct(px, py, gx, gy, v, k, s, want);
    const auto got = oks(p, g, v, {k, s});
    if (got.has_value() != any) ok = false;
    if (any && got) worst = std::max(worst, std::abs(*got - want));
  }
  const std::vector<Point> g{{10, 20}, {30, 5}, {7, 7}};
  const bool exact_one = oks(g, g, {2, 1, 2}, {{0.05, 0.07, 0.1}, 40.0}).value() == 1.0;
  const double s = 33.0, kk = 0.079, d = std::sqrt(2.0) * s * kk;
  const double unit = std::abs(oks({{d, 0}}, {{0, 0}}, {2}, {{kk}, s}).value() - std::exp(-1.0));
  ok = ok && worst <= kOksTolerance && exact_one && unit <= kOksTolerance;
  return {ok, fmt::format("100 instances max |diff| {:.1e}; OKS(gt,gt)==1: {}; e^-1 case |diff| {:.1e} (<= {:.0e})",
                          worst, exact_one, unit, kOksTolerance)};
}

// 3 --------------------------------------------------------------------
Verdict ohkm_degeneracy() {
  Rng rng(11);
  double worst_mean = 0.0, worst_max = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + uniform_index(rng, 16);
    Tensor pred = random_normal({1, k, 6, 5}, rng);
    Tensor target = random_uniform({1, k, 6, 5}, rng, 0, 1);
    Tensor mask = Tensor::full({1, k}, 1.0);
    const auto per = per_keypoint_l2(pred, target);
    const double mean = std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(k);
    const double mx = *std::max_element(per.begin(), per.end());
    worst_mean = std::max(worst_mean, std::abs(ohkm_loss(pred, target, mask, static_cast<int>(k)).item() - mean));
    worst_max = std::max(worst_max, std::abs(ohkm_loss(pred, target, mask, 1).item() - mx));
  }
  const bool ok = worst_mean <= kOhkmTolerance && worst_max <= kOhkmTolerance;
  return {ok, fmt::format("alpha_k=N vs mean |diff| {:.1e}; alpha_k=1 vs max |diff| {:.1e} (<= {:.0e})",
                          worst_mean, worst_max, kOhkmTolerance)};
}

// 4 --------------------------------------------------------------------
Verdict shape_laws() {
  Rng rng(13);
  int valid = 0, valid_ok = 0;
  for (int levels = 1; levels <= 4; ++levels) {
    for (int stages = 0; stages <= 3; ++stages) {
      for (int stride : {2, 4, 8}) {
        NetworkConfig c;
        c.backbone_widths.clear();
        for (int l = 0; l < levels; ++l) c.backbone_widths.push_back(2 << l);
        c.parallel_stages = stages;
        c.heatmap_stride = stride;
        c.pyramid_width = 2;
        c.keypoints = 2;
        c.input_height = stride << (levels - 1);
        c.input_width = 2 * c.input_height;
        ++valid;
        try {
          P2Net net(c, 1);
          Tensor x = random_normal({1, 3, static_cast<std::size_t>(c.input_height),
                                    static_cast<std::size_t>(c.input_width)}, rng);
          const auto feats = net.backbone().forward(x, Mode::kTrain);
          bool halving = feats.size() == static_cast<std::size_t>(levels);
          for (std::size_t l = 0; halving && l + 1 < feats.size(); ++l) {
            halving = feats[l].dim(2) == 2 * feats[l + 1].dim(2) && feats[l].dim(3) == 2 * feats[l + 1].dim(3);
          }
          const P2NetOutput out = net.forward(x, Mode::kTrain);
          const bool extents = out.refined.dim(2) == static_cast<std::size_t>(c.input_height / stride) &&
                               out.refined.dim(3) == static_cast<std::size_t>(c.input_width / stride);
          if (halving && extents) ++valid_ok;
        } catch (const std::exception& e) {
          std::fprintf(stderr, "  valid config rejected: %s\n", e.what());
        }
      }
    }
  }
  int invalid = 0, rejected = 0;
  auto expect_throw = [&](const std::function<void()>& fn) {
    ++invalid;
    try {
      fn();
    } catch (const ContractError&) {
      ++rejected;
    }
  };
  for (int bad : {30, 62, 100}) {
    expect_throw([&] {
      NetworkConfig c;
      c.input_height = c.input_width = bad;
      P2Net net(c, 1);
    });
  }
  expect_throw([] { FeaturePyramid({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 8, 8})}); });
  expect_throw([] { FeaturePyramid({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 2, 2})}); });
  expect_throw([] { FeaturePyramid({Tensor::zeros({1, 2, 8, 6}), Tensor::zeros({1, 2, 4, 4})}); });
  expect_throw([] {
    const ParallelStageState a({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 4, 4})});
    ParallelStageState b({Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 2, 2, 2})}, &a);
  });
  expect_throw([] {
    const ParallelStageState a({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 4, 4})});
    ParallelStageState b({Tensor::zeros({1, 2, 8, 8})}, &a);
  });
  expect_throw([] {
    Rng r(1);
    ParameterStore store;
    ExchangeUnit unit(store, "x", 2, 2, r);
    unit.forward({Tensor::zeros({1, 2, 8, 8}), Tensor::zeros({1, 2, 8, 8})});
  });
  const bool ok = valid_ok == valid && rejected == invalid;
  return {ok, fmt::format("{}/{} valid configs build with halving pyramids and constant branches; "
                          "{}/{} invalid configs rejected",
                          valid_ok, valid, rejected, invalid)};
}

// 5 --------------------------------------------------------------------
Verdict augmentation_exactness() {
  Rng rng(17);
  int eq_ok = 0;
  for (int i = 0; i < 50; ++i) {
    const int w = 8 + static_cast<int>(uniform_index(rng, 40)), h = 8 + static_cast<int>(uniform_index(rng, 40));
    Image im(w, h, 3);
    const int levels = i % 3 == 0 ? 256 : (i % 3 == 1 ? 16 : 3);
    for (auto& p : im.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, levels) * (255 / (levels - 1)));
    const Image out = apply_photometric(im, AugKind::kEqualize, 0.0, rng);
    bool same = true;
    for (int c = 0; c < 3; ++c) {
      const auto want = oracle::equalize_channel(im.pixels, 3, c);
      for (std::size_t j = 0; j < want.size(); ++j) same = same && out.pixels[j * 3 + c] == want[j];
    }
    eq_ok += same ? 1 : 0;
  }

  Image im(40, 30, 3);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  const bool bright = apply_photometric(im, AugKind::kBrightness, denormalize(AugKind::kBrightness, 5.0), rng) == im;
  bool solar = true;
  for (double thr : {0.0, 64.0, 128.0, 200.0, 256.0}) {
    const Image out = apply_photometric(im, AugKind::kSolarize, thr, rng);
    for (std::size_t j = 0; j < im.pixels.size(); ++j) {
      const int p = im.pixels[j];
      solar = solar && out.pixels[j] == (p > thr ? 255 - p : p);
    }
  }

  int marker_ok = 0, markers = 0;
  double worst = 0.0;
  const std::array kinds{AugKind::kTranslateX, AugKind::kTranslateY, AugKind::kRotate, AugKind::kScale};
  for (int i = 0; i < 100; ++i) {
    const AugKind kind = kinds[i % 4];
    AugOpSpec op{kind, 1.0, uniform(rng, 0.0, 10.0)};
    Sample s;
    s.id = "m";
    s.image = Image(64, 64, 3, kFillValue);
    s.keypoints = {{std::round(uniform(rng, 16, 48)), std::round(uniform(rng, 16, 48))}};
    s.visibility = {2};
    s.bbox = {0, 0, 64, 64};
    s.image.at(static_cast<int>(s.keypoints[0].x), static_cast<int>(s.keypoints[0].y), 0) = 255;
    MagnitudeRanges ranges;
    ranges.translate_max_px = 12.0;
    const Sample t = apply_op(s, op, rng, ranges);
    if (t.visibility[0] == 0) continue;
    ++markers;
    double cx = 0, cy = 0;
    if (!oracle::marker_centroid(t.image.pixels, 64, 64, 3, kFillValue, cx, cy)) continue;
    const double err = std::hypot(cx - t.keypoints[0].x, cy - t.keypoints[0].y);
    worst = std::max(worst, err);
    marker_ok += err <= kMarkerTolerancePx ? 1 : 0;
  }
  const bool ok = eq_ok == 50 && bright && solar && marker_ok == markers && markers >= 90;
  return {ok, fmt::format("equalize bit-exact {}/50; brightness identity {}; solarize exact {}; "
                          "markers within {:.0f}px {}/{} (worst {:.2f}px)",
                          eq_ok, bright, solar, kMarkerTolerancePx, marker_ok, markers, worst)};
}

// 6 --------------------------------------------------------------------
Verdict decode_fidelity() {
  Rng rng(19);
  const TargetOptions opts{4, 2.0, 3.0};
  const std::size_t hw = 32;
  double total = 0.0;
  int quarter_used = 0;
  for (int i = 0; i < 500; ++i) {
    // Interior: at least one sigma-radius from every border.
    const Point p{uniform(rng, 4.0 * 8, 4.0 * (hw - 9)), uniform(rng, 4.0 * 8, 4.0 * (hw - 9))};
    const auto t = render_target({p}, {2}, hw, hw, opts);
    const DecodedKeypoint d = decode_channel(t.data(), hw, hw, opts.stride);
    total += 0.5 * (std::abs(d.x - p.x) + std::abs(d.y - p.y)) / opts.stride;
    const double fx = d.x / opts.stride - std::floor(d.x / opts.stride);
    quarter_used += (std::abs(fx - 0.25) < 1e-12 || std::abs(fx - 0.75) < 1e-12) ? 1 : 0;
  }
  const double mae = total / 500.0;
  const bool ok = mae <= kDecodeMaeCells && quarter_used > 0;
  return {ok, fmt::format("500 keypoints, sigma 2: MAE {:.4f} cells (<= {}), quarter offset applied {} times",
                          mae, kDecodeMaeCells, quarter_used)};
}

// 7 --------------------------------------------------------------------
Verdict bilevel_sanity() {
  Rng rng(23);
  double worst = 0.0;
  bool zero_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const double av = uniform(rng, -3, 3), wv = uniform(rng, -3, 3), x = uniform(rng, -3, 3);
    const double zeta = uniform(rng, 0.001, 0.5);
    Tensor a = Tensor::from_data({1}, {av}, true);
    Tensor w = Tensor::from_data({1}, {wv}, true);
    auto make = [&] {
      return BilevelObjective::from_losses(
          {w}, {a}, [a, w, x] { return scalar_mul(mul(a, w), x); },
          [w] { return scalar_mul(square(w), 0.5); });
    };
    BilevelObjective obj = make();
    const Hypergradient hg = hypergradient(obj, zeta, 0.01);
    worst = std::max(worst, std::abs(hg.alpha_grad[0][0] - oracle::bilinear_hypergradient(av, wv, x, zeta)));
    BilevelObjective obj0 = make();
    zero_ok = zero_ok && hypergradient(obj0, 0.0, 0.01).alpha_grad[0][0] == 0.0;
  }
  const bool ok = worst <= kHyperTolerance && zero_ok;
  return {ok, fmt::format("100 toy instances max |diff| {:.1e} (<= {:.0e}); zeta=0 exactly zero: {}",
                          worst, kHyperTolerance, zero_ok)};
}

// 8 --------------------------------------------------------------------
Verdict search_end_to_end() {
  ExperimentConfig cfg = load_config(config_path("rotation_gap.cfg"));
  const fs::path base = work_dir("rotation_gap");
  cfg.data_root = base / "data";
  run_synth(cfg, 0, cfg.data_root);
  const auto t0 = Clock::now();
  int with_rotate = 0;
  std::string counts;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const SearchOutcome out = run_search(cfg, seed, base / fmt::format("search_{}", seed));
    int slots = 0;
    for (const auto& sp : out.policy.sub_policies) {
      for (const auto& op : sp.ops) slots += op.kind == AugKind::kRotate ? 1 : 0;
    }
    with_rotate += slots > 0 ? 1 : 0;
    counts += fmt::format("{}{}", seed == 0 ? "" : ",", slots);
  }
  const double secs = seconds_since(t0);
  const bool ok = with_rotate >= kSearchRunsRequired && secs < kSearchBudgetSeconds &&
                  cfg.search.budget <= 500;
  return {ok, fmt::format("budget {}: Rotate in {}/3 runs (slots per run {}; need >= {}), {:.0f}s (< {:.0f}s)",
                          cfg.search.budget, with_rotate, counts, kSearchRunsRequired, secs,
                          kSearchBudgetSeconds)};
}

// 9 --------------------------------------------------------------------
Verdict training_smoke() {
  ExperimentConfig cfg = load_config(config_path("default.cfg"));
  const fs::path base = work_dir("training");
  cfg.data_root = base / "data";
  run_synth(cfg, 0, cfg.data_root);
  const auto t0 = Clock::now();
  const TrainResult tr = run_train(cfg, 0, base / "train");
  const double secs = seconds_since(t0);
  const std::size_t tail = std::min<std::size_t>(100, tr.losses.size());
  const double late = std::accumulate(tr.losses.end() - static_cast<long>(tail), tr.losses.end(), 0.0) /
                      static_cast<double>(tail);
  const double drop = tr.losses.front() / late;
  cfg.eval.checkpoint = base / "train" / "model.ckpt";
  cfg.eval.split = "test";
  const EvalResult ev = run_eval(cfg, 0, base / "eval");
  const bool ok = tr.steps == 2000 && drop >= kLossDropFactor && ev.pckh.total >= kPckhTarget &&
                  secs < kTrainBudgetSeconds;
  return {ok, fmt::format("{} steps: loss {:.4f} -> {:.4f} (last-100 mean), drop {:.1f}x (>= {:.0f}x); "
                          "test PCKh@0.5 {:.3f} (>= {}); AP {:.3f}; {:.0f}s",
                          tr.steps, tr.losses.front(), late, drop, kLossDropFactor, ev.pckh.total,
                          kPckhTarget, ev.ap.ap, secs)};
}

// 10 -------------------------------------------------------------------
std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

Verdict determinism() {
  ExperimentConfig cfg = load_config(config_path("default.cfg"));
  const fs::path base = work_dir("determinism");
  std::vector<std::string> stages;
  bool ok = true;
  auto compare = [&](const std::string& what, const fs::path& a, const fs::path& b) {
    const auto ta = read_tree(a), tb = read_tree(b);
    const bool same = !ta.empty() && ta == tb;
    ok = ok && same;
    stages.push_back(fmt::format("{} {} ({} files)", what, same ? "identical" : "DIFFER", ta.size()));
  };
  run_synth(cfg, 5, base / "synth_a");
  run_synth(cfg, 5, base / "synth_b");
  compare("synth", base / "synth_a", base / "synth_b");

  cfg.data_root = base / "synth_a";
  cfg.training.steps = 500;
  run_train(cfg, 5, base / "train_a");
  run_train(cfg, 5, base / "train_b");
  compare("train", base / "train_a", base / "train_b");

  ExperimentConfig scfg = cfg;
  scfg.search.budget = 50;
  run_search(scfg, 5, base / "search_a");
  run_search(scfg, 5, base / "search_b");
  compare("search", base / "search_a", base / "search_b");

  cfg.eval.checkpoint = base / "train_a" / "model.ckpt";
  run_eval(cfg, 5, base / "eval_a");
  run_eval(cfg, 5, base / "eval_b");
  compare("eval", base / "eval_a", base / "eval_b");

  std::string detail;
  for (const auto& s : stages) detail += (detail.empty() ? "" : "; ") + s;
  return {ok, detail};
}

struct Criterion {
  int id;
  const char* name;
  Verdict (*run)();
};

const Criterion kCriteria[] = {
    {1, "gradient correctness", gradient_correctness},
    {2, "OKS oracle equivalence", oks_oracle},
    {3, "OHKM degeneracy", ohkm_degeneracy},
    {4, "shape laws", shape_laws},
    {5, "augmentation exactness", augmentation_exactness},
    {6, "decode fidelity", decode_fidelity},
    {7, "bilevel sanity", bilevel_sanity},
    {8, "search end-to-end", search_end_to_end},
    {9, "training smoke", training_smoke},
    {10, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  g_work = fs::temp_directory_path() / "p2net_acceptance";
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = fs::absolute(argv[++i]);
    } else if (arg == "--help" || arg == "-h") {
      std::printf("usage: %s [--work DIR] [criterion ...]\n", argv[0]);
      return 0;
    } else {
      try {
        selected.push_back(std::stoi(arg));
      } catch (const std::exception&) {
        std::fprintf(stderr, "unknown argument '%s'\n", arg.c_str());
        return 2;
      }
    }
  }
  if (selected.empty()) {
    for (const auto& c : kCriteria) selected.push_back(c.id);
  }
  fs::create_directories(g_work);

  int failures = 0;
  for (int id : selected) {
    const auto it = std::find_if(std::begin(kCriteria), std::end(kCriteria),
                                 [id](const Criterion& c) { return c.id == id; });
    if (it == std::end(kCriteria)) {
      std::fprintf(stderr, "no criterion %d\n", id);
      return 2;
    }
    Verdict v;
    try {
      v = it->run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %-24s %s  %s\n", it->id, it->name, v.pass ? "PASS" : "FAIL",
                v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
