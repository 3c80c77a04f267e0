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

#include "p2net/experiment.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "p2net/checkpoint.hpp"
#include "p2net/errors.hpp"
#include "p2net/gradcheck_suite.hpp"
#include "p2net/losses.hpp"
#include "p2net/ops.hpp"
#include "p2net/policy_io.hpp"
#include "p2net/synth.hpp"

namespace p2net {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string num(double v) { return fmt::format("{:.10g}", v); }

void check_dataset(const DatasetInfo& info, const NetworkConfig& net) {
  if (info.image_width != net.input_width || info.image_height != net.input_height) {
    throw ConfigError(fmt::format("dataset images are {}x{} but the network expects {}x{}",
                                  info.image_width, info.image_height, net.input_width,
                                  net.input_height));
  }
  if (info.joint_names.size() != static_cast<std::size_t>(net.keypoints)) {
    throw ConfigError(fmt::format("dataset has {} joints but the network predicts {}",
                                  info.joint_names.size(), net.keypoints));
  }
}

std::vector<double> resolve_oks_k(const ExperimentConfig& config, const DatasetInfo& info) {
  return config.eval.oks_k.empty() ? info.oks_k : config.eval.oks_k;
}

constexpr std::array<std::array<std::uint8_t, 3>, 9> kMarkerColors = {{
    {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}, {255, 0, 255},
    {0, 255, 255}, {255, 128, 0}, {128, 0, 255}, {255, 255, 255},
}};

std::vector<NamedArray> optimizer_arrays(const OptimizerState& opt) {
  std::vector<NamedArray> arrays;
  arrays.push_back({"opt/step", {1}, {static_cast<double>(opt.step)}});
  for (std::size_t i = 0; i < opt.first_moment.size(); ++i) {
    arrays.push_back({"opt/m/" + std::to_string(i), {opt.first_moment[i].size()}, opt.first_moment[i]});
    arrays.push_back({"opt/v/" + std::to_string(i), {opt.second_moment[i].size()}, opt.second_moment[i]});
  }
  return arrays;
}

void restore_optimizer(const std::vector<NamedArray>& arrays, OptimizerState& opt,
                       std::size_t count) {
  const NamedArray* step = find_array(arrays, "opt/step");
  if (step == nullptr) throw ContractError("checkpoint has no optimizer state");
  opt.step = static_cast<std::int64_t>(step->data.at(0));
  opt.first_moment.clear();
  opt.second_moment.clear();
  if (find_array(arrays, "opt/m/0") == nullptr) return;
  for (std::size_t i = 0; i < count; ++i) {
    const NamedArray* m = find_array(arrays, "opt/m/" + std::to_string(i));
    const NamedArray* v = find_array(arrays, "opt/v/" + std::to_string(i));
    if (m == nullptr || v == nullptr) throw ContractError("checkpoint optimizer state is incomplete");
    opt.first_moment.push_back(m->data);
    opt.second_moment.push_back(v->data);
  }
}

void save_training_checkpoint(const fs::path& path, const P2Net& net, const OptimizerState& opt,
                              std::size_t completed_steps) {
  auto arrays = net.store().export_arrays();
  auto extra = optimizer_arrays(opt);
  arrays.insert(arrays.end(), extra.begin(), extra.end());
  arrays.push_back({"train/step", {1}, {static_cast<double>(completed_steps)}});
  save_checkpoint(path, arrays);
}

double learning_rate_at(const TrainingConfig& t, std::size_t step) {
  const double progress = t.steps == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(t.steps);
  double lr = t.learning_rate;
  if (progress >= 0.7) lr *= 0.5;
  if (progress >= 0.9) lr *= 0.5;
  return lr;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples, std::size_t limit = 0) {
  std::vector<const Sample*> out;
  const std::size_t n = limit == 0 ? samples.size() : std::min(limit, samples.size());
  for (std::size_t i = 0; i < n; ++i) out.push_back(&samples[i]);
  return out;
}

EvalResult evaluate_network(const P2Net& net, const std::vector<Sample>& samples,
                            const DatasetInfo& info, const std::vector<double>& oks_k,
                            const EvalConfig& eval, std::size_t limit) {
  const auto all = pointers(samples, limit);
  std::vector<std::vector<DecodedKeypoint>> keypoints;
  for (std::size_t first = 0; first < all.size(); first += eval.batch_size) {
    const std::vector<const Sample*> batch(
        all.begin() + static_cast<long>(first),
        all.begin() + static_cast<long>(std::min(all.size(), first + eval.batch_size)));
    auto decoded = predict_keypoints(net, batch, info.flip, eval.flip, eval.smooth);
    keypoints.insert(keypoints.end(), decoded.begin(), decoded.end());
  }
  const std::vector<Sample> used(samples.begin(), samples.begin() + static_cast<long>(all.size()));
  return score_predictions(used, keypoints, oks_k, eval.pckh_threshold);
}

std::string metrics_csv(const std::string& split, const EvalResult& r,
                        const std::vector<std::string>& joints) {
  std::ostringstream os;
  os << "split,instances,skipped,AP,AP50,AP75,AR,PCKh";
  for (const std::string& j : joints) os << ",PCKh_" << j;
  os << "\n"
     << split << "," << r.instances << "," << r.skipped << "," << num(r.ap.ap) << ","
     << num(r.ap.ap50) << "," << num(r.ap.ap75) << "," << num(r.ap.ar) << ","
     << num(r.pckh.total);
  for (double v : r.pckh.per_keypoint) os << "," << (std::isnan(v) ? std::string("nan") : num(v));
  os << "\n";
  return os.str();
}

}  // namespace

Image flip_image(const Image& image) {
  Image out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
      }
    }
  }
  return out;
}

Sample flip_sample(const Sample& sample, const FlipSpec& fs) {
  Sample out = sample;
  out.image = flip_image(sample.image);
  const double last = sample.image.width - 1;
  for (Point& p : out.keypoints) p.x = last - p.x;
  out.bbox.x = sample.image.width - (sample.bbox.x + sample.bbox.width);
  const auto perm = fs.permutation(sample.keypoints.size());
  const Sample mirrored = out;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.keypoints[k] = mirrored.keypoints[perm[k]];
    out.visibility[k] = mirrored.visibility[perm[k]];
  }
  return out;
}

Image draw_markers(const Image& image, const std::vector<Point>& keypoints,
                   const std::vector<int>& visibility) {
  Image out = image;
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    if (visibility[k] <= 0) continue;
    const int cx = static_cast<int>(std::lround(keypoints[k].x));
    const int cy = static_cast<int>(std::lround(keypoints[k].y));
    const auto& color = kMarkerColors[k % kMarkerColors.size()];
    for (int d = -1; d <= 1; ++d) {
      for (const auto& [x, y] : {std::pair{cx + d, cy}, std::pair{cx, cy + d}}) {
        if (!out.contains(x, y)) continue;
        for (int c = 0; c < out.channels; ++c) {
          out.at(x, y, c) = out.channels == 3 ? color[static_cast<std::size_t>(c)] : 255;
        }
      }
    }
  }
  return out;
}

HeatmapSet combine_heatmaps(const HeatmapSet& hm, const HeatmapSet* flipped, const FlipSpec& fs,
                            int image_width, bool smooth) {
  HeatmapSet base = smooth ? gaussian_smooth(hm) : hm;
  if (flipped == nullptr) return base;
  if (!hm.same_shape(*flipped)) throw ShapeError("flip heatmaps differ in shape");
  const HeatmapSet f = smooth ? gaussian_smooth(*flipped) : *flipped;
  const double offset = flip_alignment_offset(image_width, hm.stride, hm.width);
  // Pre-shift in the flipped frame so that the plain un-flip lands aligned.
  return flip_average(base, shift_columns(f, -offset), fs);
}

std::vector<std::vector<DecodedKeypoint>> predict_keypoints(const P2Net& net,
                                                            const std::vector<const Sample*>& batch,
                                                            const FlipSpec& fs, bool flip,
                                                            bool smooth) {
  NoGradGuard no_grad;
  std::vector<const Image*> images;
  for (const Sample* s : batch) images.push_back(&s->image);
  const int stride = net.config().heatmap_stride;
  const HeatmapSet hm =
      HeatmapSet::from_tensor(net.forward(images_to_tensor(images), Mode::kEval).refined, stride);
  std::optional<HeatmapSet> hf;
  if (flip) {
    std::vector<Image> flipped;
    for (const Image* img : images) flipped.push_back(flip_image(*img));
    std::vector<const Image*> ptrs;
    for (const Image& img : flipped) ptrs.push_back(&img);
    hf = HeatmapSet::from_tensor(net.forward(images_to_tensor(ptrs), Mode::kEval).refined, stride);
  }
  return decode(combine_heatmaps(hm, hf ? &*hf : nullptr, fs, net.config().input_width, smooth));
}

std::vector<std::vector<DecodedKeypoint>> oracle_keypoints(const std::vector<const Sample*>& batch,
                                                           const FlipSpec& fs, bool flip,
                                                           bool smooth, int stride, double sigma,
                                                           std::size_t heatmap_height,
                                                           std::size_t heatmap_width) {
  if (batch.empty()) return {};
  const std::size_t k = batch.front()->keypoints.size();
  TargetOptions opts;
  opts.stride = stride;
  opts.sigma = sigma;
  HeatmapSet hm(batch.size(), k, heatmap_height, heatmap_width, stride);
  HeatmapSet hf = hm;
  const std::size_t chunk = k * heatmap_height * heatmap_width;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sample& s = *batch[b];
    const auto a = render_target(s.keypoints, s.visibility, heatmap_height, heatmap_width, opts);
    std::copy(a.begin(), a.end(), hm.values.begin() + static_cast<long>(b * chunk));
    if (flip) {
      const Sample f = flip_sample(s, fs);
      const auto c = render_target(f.keypoints, f.visibility, heatmap_height, heatmap_width, opts);
      std::copy(c.begin(), c.end(), hf.values.begin() + static_cast<long>(b * chunk));
    }
  }
  return decode(combine_heatmaps(hm, flip ? &hf : nullptr, fs, batch.front()->image.width, smooth));
}

EvalResult score_predictions(const std::vector<Sample>& samples,
                             const std::vector<std::vector<DecodedKeypoint>>& keypoints,
                             const std::vector<double>& oks_k, double pckh_threshold) {
  if (samples.size() != keypoints.size()) throw ShapeError("score: prediction count mismatch");
  EvalResult r;
  std::vector<ImageMatches> images;
  std::vector<std::vector<Point>> pred_pts, gt_pts;
  std::vector<std::vector<int>> vis;
  std::vector<double> heads;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    std::vector<Point> pts;
    for (const DecodedKeypoint& kp : keypoints[i]) pts.push_back({kp.x, kp.y});
    Prediction pred{s.id, keypoints[i], instance_score(1.0, keypoints[i])};
    r.predictions.push_back(pred);
    const auto o = oks(pts, s.keypoints, s.visibility,
                       OksContext{oks_k, std::sqrt(std::max(s.bbox.area(), 1e-12))});
    if (!o) {
      ++r.skipped;
      continue;
    }
    ++r.instances;
    images.push_back({{pred.score}, {{*o}}, 1});
    pred_pts.push_back(pts);
    gt_pts.push_back(s.keypoints);
    vis.push_back(s.visibility);
    heads.push_back(s.head_size);
  }
  r.ap = ap_ar(images);
  r.pckh = pckh(pred_pts, gt_pts, vis, heads, pckh_threshold);
  return r;
}

TrainResult run_train(const ExperimentConfig& config, std::uint64_t seed, const fs::path& out_dir,
                      const TrainHooks& hooks) {
  const TrainingConfig& t = config.training;
  const DatasetInfo info = load_dataset_info(config.data_root);
  check_dataset(info, config.network);
  const std::vector<Sample> train = load_split(config.data_root, "train");
  const std::vector<Sample> val = load_split(config.data_root, "val");
  if (train.empty()) throw ConfigError("training split is empty");
  fs::create_directories(out_dir);

  P2Net net(config.network, derive_seed(seed, {hash_label("init")}));
  OptimizerState opt;
  opt.algo = t.optimizer;
  opt.learning_rate = t.learning_rate;
  opt.weight_decay = t.weight_decay;
  std::size_t start = 0;
  if (!t.resume.empty()) {
    const auto arrays = load_checkpoint(t.resume);
    net.store().import_arrays(arrays);
    restore_optimizer(arrays, opt, net.store().parameters().size());
    const NamedArray* step = find_array(arrays, "train/step");
    if (step == nullptr) throw ContractError("resume checkpoint has no train/step entry");
    start = static_cast<std::size_t>(step->data.at(0));
    spdlog::info("resuming from {} at step {}", t.resume.string(), start);
  }
  std::optional<Policy> policy;
  if (!t.policy.empty()) policy = load_policy(t.policy);

  const std::size_t hh = static_cast<std::size_t>(config.network.heatmap_height());
  const std::size_t hw = static_cast<std::size_t>(config.network.heatmap_width());
  TargetOptions target;
  target.stride = config.network.heatmap_stride;
  target.sigma = t.sigma;
  const auto oks_k = resolve_oks_k(config, info);

  std::ostringstream log;
  log << "step,lr,loss,parallel_loss,refined_loss\n";
  std::ostringstream val_log;
  val_log << "step,AP,PCKh\n";
  TrainResult result;
  result.first_step = start;
  auto& params = net.store().parameters();
  auto validate = [&](std::size_t step) {
    EvalConfig quick = config.eval;
    EvalResult r = evaluate_network(net, val, info, oks_k, quick, t.val_samples);
    val_log << step << "," << num(r.ap.ap) << "," << num(r.pckh.total) << "\n";
    spdlog::info("step {}: val AP {:.4f} PCKh {:.4f}", step, r.ap.ap, r.pckh.total);
    return r;
  };

  for (std::size_t step = start; step < t.steps; ++step) {
    Rng rng(derive_seed(seed, {hash_label("train"), step}));
    std::vector<Sample> batch;
    for (std::size_t i = 0; i < t.batch_size; ++i) batch.push_back(train[uniform_index(rng, train.size())]);
    if (policy) batch = apply_policy(batch, *policy, rng);
    std::vector<const Image*> images;
    for (const Sample& s : batch) images.push_back(&s.image);
    const TargetBatch targets = render_targets(batch, hh, hw, target);
    const P2NetOutput out = net.forward(images_to_tensor(images), Mode::kTrain);
    const PoseLoss loss = pose_loss(out.parallel, out.refined, targets, t.alpha_k);
    const double value = loss.total.item();
    if (!std::isfinite(value)) {
      save_training_checkpoint(out_dir / "last_good.ckpt", net, opt, step);
      write_file(out_dir / "train_log.csv", log.str());
      throw NumericError(fmt::format("non-finite loss at step {}; wrote last_good.ckpt", step));
    }
    zero_grads(params);
    backward(loss.total);
    opt.learning_rate = learning_rate_at(t, step);
    optimizer_step(params, opt);
    zero_grads(params);
    log << step << "," << num(opt.learning_rate) << "," << num(value) << ","
        << num(loss.parallel.item()) << "," << num(loss.refined.item()) << "\n";
    result.losses.push_back(value);
    if (hooks.on_step) hooks.on_step(step, value);
    if (step % 100 == 0) spdlog::info("step {} loss {:.6f}", step, value);
    const std::size_t done = step + 1;
    if (t.checkpoint_every > 0 && done % t.checkpoint_every == 0) {
      save_training_checkpoint(out_dir / fmt::format("step_{:06d}.ckpt", done), net, opt, done);
    }
    if (t.val_every > 0 && done % t.val_every == 0 && done < t.steps && !val.empty()) validate(done);
  }
  result.steps = t.steps;
  if (!val.empty() && t.val_every > 0) result.final_val = validate(t.steps);
  save_training_checkpoint(out_dir / "model.ckpt", net, opt, std::max(start, t.steps));
  write_file(out_dir / "train_log.csv", log.str());
  write_file(out_dir / "val_log.csv", val_log.str());
  return result;
}

EvalResult run_eval(const ExperimentConfig& config, std::uint64_t seed, const fs::path& out_dir,
                    bool oracle) {
  (void)seed;  // evaluation draws no random numbers
  const EvalConfig& e = config.eval;
  const DatasetInfo info = load_dataset_info(config.data_root);
  check_dataset(info, config.network);
  std::vector<Sample> samples = load_split(config.data_root, e.split);
  if (e.max_samples > 0 && samples.size() > e.max_samples) samples.resize(e.max_samples);
  const auto oks_k = resolve_oks_k(config, info);
  fs::create_directories(out_dir);
  EvalResult r;
  if (oracle) {
    const auto ptrs = pointers(samples);
    const auto kps = oracle_keypoints(
        ptrs, info.flip, e.flip, e.smooth, config.network.heatmap_stride, config.training.sigma,
        static_cast<std::size_t>(config.network.heatmap_height()),
        static_cast<std::size_t>(config.network.heatmap_width()));
    r = score_predictions(samples, kps, oks_k, e.pckh_threshold);
  } else {
    if (e.checkpoint.empty()) throw ConfigError("evaluation.checkpoint is not set");
    P2Net net(config.network, 0);
    net.store().import_arrays(load_checkpoint(e.checkpoint));
    r = evaluate_network(net, samples, info, oks_k, e, 0);
  }
  write_file(out_dir / "metrics.csv", metrics_csv(e.split, r, info.joint_names));
  save_predictions(out_dir / "predictions.jsonl", r.predictions);
  return r;
}

std::string alpha_to_json(const Alpha& alpha, const CandidateSet& candidates) {
  nlohmann::json j;
  j["sub_policies"] = alpha.sub_policies();
  j["positions"] = alpha.positions();
  j["candidates"] = nlohmann::json::array();
  for (std::size_t i = 0; i < candidates.size(); ++i) j["candidates"].push_back(candidates.label(i));
  const auto logits = alpha.logits().data();
  j["logits"] = nlohmann::json::array();
  for (std::size_t s = 0; s < alpha.slots(); ++s) {
    j["logits"].push_back(std::vector<double>(
        logits.begin() + static_cast<long>(s * alpha.candidates()),
        logits.begin() + static_cast<long>((s + 1) * alpha.candidates())));
  }
  const auto p = alpha.probability_logits().data();
  j["probability_logits"] = std::vector<double>(p.begin(), p.end());
  return j.dump(2) + "\n";
}

SearchOutcome run_search(const ExperimentConfig& config, std::uint64_t seed,
                         const fs::path& out_dir) {
  const DatasetInfo info = load_dataset_info(config.data_root);
  check_dataset(info, config.network);
  const std::vector<Sample> train = load_split(config.data_root, "train");
  const std::vector<Sample> val = load_split(config.data_root, "val");
  fs::create_directories(out_dir);
  P2Net net(config.network, derive_seed(seed, {hash_label("search-init")}));
  PolicySearch search(net, train, val, config.search, derive_seed(seed, {hash_label("search")}));
  const CandidateSet& cands = config.search.candidates;
  const std::size_t slots = search.alpha().slots();

  std::ostringstream log;
  log << "step,train_loss,val_loss";
  for (std::size_t s = 0; s < slots; ++s) log << ",entropy_" << s;
  log << "\n";
  std::ostringstream traj;
  traj << "step";
  for (std::size_t s = 0; s < slots; ++s) {
    for (std::size_t o = 0; o < cands.size(); ++o) traj << ",s" << s << ":" << cands.label(o);
  }
  for (std::size_t s = 0; s < slots; ++s) traj << ",p" << s;
  traj << "\n";

  SearchOutcome outcome;
  auto record = [&](const SearchRecord& r) {
    log << r.step << "," << num(r.train_loss) << "," << num(r.val_loss);
    for (double h : r.entropy) log << "," << num(h);
    log << "\n";
    traj << r.step;
    for (double v : r.logits) traj << "," << num(v);
    for (double v : r.probability) traj << "," << num(v);
    traj << "\n";
    if (r.step % 10 == 0) {
      spdlog::info("search step {}: train {:.5f} val {:.5f}", r.step, r.train_loss, r.val_loss);
    }
  };
  try {
    outcome.records = search.run(record);
  } catch (const NumericError& e) {
    nlohmann::json dump;
    dump["error"] = e.what();
    dump["step"] = search.steps_done();
    dump["alpha"] = nlohmann::json::parse(alpha_to_json(search.alpha(), cands));
    write_file(out_dir / "divergence.json", dump.dump(2) + "\n");
    write_file(out_dir / "search_log.csv", log.str());
    throw;
  }
  outcome.policy = search.policy();
  write_file(out_dir / "search_log.csv", log.str());
  write_file(out_dir / "alpha_trajectory.csv", traj.str());
  write_file(out_dir / "alpha.json", alpha_to_json(search.alpha(), cands));
  save_policy(out_dir / "policy.json", outcome.policy);
  return outcome;
}

void run_augment(const ExperimentConfig& config, std::uint64_t seed, const fs::path& out_dir) {
  const AugmentConfig& a = config.augment;
  if (a.policy.empty()) throw ConfigError("augment.policy is not set");
  const Policy policy = load_policy(a.policy);
  std::vector<Sample> samples = load_split(config.data_root, a.split);
  if (a.count > 0 && samples.size() > a.count) samples.resize(a.count);
  fs::create_directories(out_dir);
  std::ostringstream ann;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, {hash_label("augment"), i}));
    const Sample out = apply_policy({samples[i]}, policy, rng).front();
    write_pnm(out_dir / (out.id + ".ppm"), out.image);
    write_pnm(out_dir / (out.id + "_markers.ppm"),
              draw_markers(out.image, out.keypoints, out.visibility));
    ann << annotation_line(out, out.id + ".ppm") << "\n";
  }
  write_file(out_dir / "annotations.jsonl", ann.str());
}

void run_synth(const ExperimentConfig& config, std::uint64_t seed, const fs::path& out_dir) {
  write_synth_dataset(config.dataset, seed, out_dir);
}

bool run_gradcheck(std::uint64_t seed, const fs::path& out_dir, std::size_t instances) {
  fs::create_directories(out_dir);
  const auto reports = run_gradcheck_suite(instances, seed);
  std::ostringstream os;
  os << "family,instances,failures,max_relative_error,coordinates,kinks_skipped,status\n";
  bool ok = true;
  for (const FamilyReport& r : reports) {
    os << r.name << "," << r.instances << "," << r.failures << "," << fmt::format("{:.3e}", r.max_error)
       << "," << r.coordinates << "," << r.kinks_skipped << "," << (r.passed() ? "pass" : "FAIL")
       << "\n";
    ok = ok && r.passed();
  }
  write_file(out_dir / "gradcheck.csv", os.str());
  return ok;
}

}  // namespace p2net
