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

#include "p2net/search.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "p2net/errors.hpp"
#include "p2net/ops.hpp"

namespace p2net {

namespace {

std::vector<std::vector<double>> copy_grads(const std::vector<Tensor>& tensors) {
  std::vector<std::vector<double>> grads;
  grads.reserve(tensors.size());
  for (const Tensor& t : tensors) {
    const auto g = t.grad();
    if (g.empty()) {
      grads.emplace_back(t.numel(), 0.0);
    } else {
      grads.emplace_back(g.begin(), g.end());
    }
  }
  return grads;
}

void zero_all(const std::vector<Tensor>& tensors) {
  for (Tensor t : tensors) t.zero_grad();
}

std::vector<std::vector<double>> values_of(const std::vector<Tensor>& tensors) {
  std::vector<std::vector<double>> values;
  for (const Tensor& t : tensors) values.emplace_back(t.data().begin(), t.data().end());
  return values;
}

void assign(std::vector<Tensor>& tensors, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    std::copy(values[i].begin(), values[i].end(), tensors[i].mutable_data().begin());
  }
}

// tensors <- base + scale * direction
void assign_axpy(std::vector<Tensor>& tensors, const std::vector<std::vector<double>>& base,
                 double scale, const std::vector<std::vector<double>>& direction) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto dst = tensors[i].mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = base[i][j] + scale * direction[i][j];
  }
}

bool all_finite(const std::vector<std::vector<double>>& values) {
  for (const auto& v : values) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Element `index` of a 1-D tensor as a differentiable [1] tensor.
Tensor element(const Tensor& vector, std::size_t index) {
  return select_row(reshape(vector, {vector.numel(), 1}), index);
}

}  // namespace

CandidateSet::CandidateSet(std::vector<Candidate> items) : items_(std::move(items)) {
  if (items_.empty()) throw ContractError("candidate set must not be empty");
  for (const Candidate& c : items_) AugOpSpec{c.kind, 1.0, c.magnitude}.validate();
}

CandidateSet CandidateSet::from_bins(const std::vector<AugKind>& kinds,
                                     const std::vector<double>& bins) {
  std::vector<Candidate> items;
  for (AugKind kind : kinds) {
    if (!has_magnitude(kind)) {
      items.push_back({kind, 0.0});
      continue;
    }
    for (double m : bins) items.push_back({kind, m});
  }
  return CandidateSet(std::move(items));
}

CandidateSet CandidateSet::default_set() {
  return from_bins({kAllAugKinds.begin(), kAllAugKinds.end()}, {2.5, 5.0, 7.5});
}

bool CandidateSet::photometric_only() const {
  return std::none_of(items_.begin(), items_.end(),
                      [](const Candidate& c) { return is_geometric(c.kind); });
}

std::string CandidateSet::label(std::size_t i) const {
  std::ostringstream os;
  os << to_string(items_.at(i).kind);
  if (has_magnitude(items_[i].kind)) os << "@" << items_[i].magnitude;
  return os.str();
}

Alpha::Alpha(std::size_t sub_policies, std::size_t positions, std::size_t candidates)
    : sub_policies_(sub_policies), positions_(positions), candidates_(candidates) {
  if (sub_policies == 0 || positions == 0 || candidates == 0) {
    throw ContractError("alpha: K, N and |O| must be positive");
  }
  logits_ = Tensor::zeros({slots(), candidates}, true);
  prob_logits_ = Tensor::zeros({slots(), 1}, true);
}

std::vector<double> Alpha::weights(std::size_t slot) const {
  NoGradGuard no_grad;
  const Tensor w = softmax(select_row(logits_, slot));
  return {w.data().begin(), w.data().end()};
}

double Alpha::probability(std::size_t slot) const {
  return logistic(prob_logits_.data()[slot]);
}

double Alpha::entropy(std::size_t slot) const {
  double h = 0.0;
  for (double w : weights(slot)) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

Policy discretize(const Alpha& alpha, const CandidateSet& candidates) {
  if (alpha.candidates() != candidates.size()) {
    throw ShapeError("discretize: alpha has " + std::to_string(alpha.candidates()) +
                     " columns but the candidate set has " + std::to_string(candidates.size()));
  }
  const auto logits = alpha.logits().data();
  Policy policy;
  for (std::size_t k = 0; k < alpha.sub_policies(); ++k) {
    SubPolicy sp;
    for (std::size_t n = 0; n < alpha.positions(); ++n) {
      const std::size_t slot = alpha.slot(k, n);
      const double* row = logits.data() + slot * alpha.candidates();
      std::size_t best = 0;
      for (std::size_t o = 1; o < alpha.candidates(); ++o) {
        if (row[o] > row[best]) best = o;
      }
      sp.ops.push_back({candidates[best].kind, alpha.probability(slot), candidates[best].magnitude});
    }
    policy.sub_policies.push_back(std::move(sp));
  }
  return policy;
}

Tensor mix_candidate_losses(const Tensor& alpha_row, const std::vector<Tensor>& losses) {
  if (alpha_row.rank() != 1 || alpha_row.numel() != losses.size()) {
    throw ShapeError("relaxed loss: alpha row has " + std::to_string(alpha_row.numel()) +
                     " entries for " + std::to_string(losses.size()) + " candidates");
  }
  std::vector<Tensor> flat;
  for (const Tensor& l : losses) flat.push_back(reshape(l, {1}));
  return sum(mul(softmax(alpha_row), reshape(stack_scalars(flat), {losses.size()})));
}

Tensor relaxed_loss(const Tensor& alpha_row, const Tensor& probability_logit,
                    const std::vector<Tensor>& candidate_losses, const Tensor& identity_loss) {
  const Tensor mix = mix_candidate_losses(alpha_row, candidate_losses);
  const Tensor p = reshape(sigmoid(reshape(probability_logit, {1})), {});
  const Tensor id = reshape(identity_loss, {});
  return add(id, mul(p, sub(mix, id)));
}

BilevelObjective BilevelObjective::from_losses(std::vector<Tensor> omega, std::vector<Tensor> alpha,
                                               std::function<Tensor()> train_loss,
                                               std::function<Tensor()> val_loss) {
  BilevelObjective obj;
  obj.omega = omega;
  obj.alpha = alpha;
  obj.train_omega_grad = [omega, alpha, train_loss](std::vector<std::vector<double>>& g) {
    zero_all(omega);
    zero_all(alpha);
    const Tensor loss = train_loss();
    backward(loss);
    g = copy_grads(omega);
    return loss.item();
  };
  obj.val_omega_grad = [omega, val_loss](std::vector<std::vector<double>>& g) {
    zero_all(omega);
    const Tensor loss = val_loss();
    backward(loss);
    g = copy_grads(omega);
    return loss.item();
  };
  obj.train_alpha_grad = [omega, alpha, train_loss](std::vector<std::vector<double>>& g) {
    zero_all(alpha);
    const Tensor loss = train_loss();
    backward(loss);
    g = copy_grads(alpha);
    zero_all(omega);
    return loss.item();
  };
  return obj;
}

InnerStep inner_step(BilevelObjective& objective, double zeta) {
  if (!(zeta >= 0.0)) throw ContractError("inner_step: zeta must be >= 0");
  InnerStep step;
  step.train_loss = objective.train_omega_grad(step.train_grad);
  if (!std::isfinite(step.train_loss) || !all_finite(step.train_grad)) {
    throw NumericError("inner_step: non-finite training gradient; step aborted");
  }
  step.omega_prime = values_of(objective.omega);
  for (std::size_t i = 0; i < step.omega_prime.size(); ++i) {
    for (std::size_t j = 0; j < step.omega_prime[i].size(); ++j) {
      step.omega_prime[i][j] -= zeta * step.train_grad[i][j];
    }
  }
  return step;
}

Hypergradient hypergradient(BilevelObjective& objective, double zeta, double eps_scale) {
  if (!(eps_scale > 0.0)) throw ContractError("hypergradient: eps_scale must be positive");
  Hypergradient out;
  for (const Tensor& a : objective.alpha) out.alpha_grad.emplace_back(a.numel(), 0.0);
  const auto omega = values_of(objective.omega);
  out.inner = inner_step(objective, zeta);

  std::vector<std::vector<double>> g;
  assign(objective.omega, out.inner.omega_prime);
  out.val_loss = objective.val_omega_grad(g);
  assign(objective.omega, omega);
  if (!std::isfinite(out.val_loss) || !all_finite(g)) {
    throw NumericError("hypergradient: non-finite validation gradient");
  }
  double norm2 = 0.0;
  for (const auto& v : g) {
    for (double x : v) norm2 += x * x;
  }
  out.grad_norm = std::sqrt(norm2);
  if (out.grad_norm == 0.0) return out;
  out.epsilon = eps_scale / out.grad_norm;

  std::vector<std::vector<double>> plus, minus;
  assign_axpy(objective.omega, omega, out.epsilon, g);
  objective.train_alpha_grad(plus);
  assign_axpy(objective.omega, omega, -out.epsilon, g);
  objective.train_alpha_grad(minus);
  assign(objective.omega, omega);

  for (std::size_t i = 0; i < out.alpha_grad.size(); ++i) {
    for (std::size_t j = 0; j < out.alpha_grad[i].size(); ++j) {
      out.alpha_grad[i][j] = -zeta * (plus[i][j] - minus[i][j]) / (2.0 * out.epsilon);
    }
  }
  return out;
}

void SearchConfig::validate() const {
  if (candidates.size() == 0) throw ConfigError("search: candidate set is empty");
  if (sub_policies == 0 || positions == 0) throw ConfigError("search: K and N must be >= 1");
  if (!(zeta > 0.0)) throw ConfigError("search: zeta must be > 0");
  if (!(eps_scale > 0.0)) throw ConfigError("search: eps_scale must be > 0");
  if (!(alpha_lr > 0.0) || !(omega_lr > 0.0)) throw ConfigError("search: learning rates must be > 0");
  if (batch_size == 0 || val_batch_size == 0) throw ConfigError("search: batch sizes must be >= 1");
  if (candidate_subsample > candidates.size()) {
    throw ConfigError("search: candidate_subsample exceeds the candidate count");
  }
  if (pixel_mixing && !candidates.photometric_only()) {
    throw ConfigError("search: pixel mixing needs a photometric-only candidate set");
  }
}

PolicySearch::PolicySearch(P2Net& network, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, SearchConfig config, std::uint64_t seed)
    : network_(network),
      train_(train),
      val_(val),
      config_(std::move(config)),
      seed_(seed),
      alpha_(config_.sub_policies, config_.positions, config_.candidates.size()) {
  config_.validate();
  if (train_.empty() || val_.empty()) throw ContractError("search: empty train or val split");
  for (const Sample& a : train_) {
    for (const Sample& b : val_) {
      if (a.id == b.id) throw ContractError("search: sample '" + a.id + "' is in both splits");
    }
  }
  alpha_opt_.algo = OptimizerAlgo::kAdam;
  alpha_opt_.learning_rate = config_.alpha_lr;
  omega_opt_.algo = OptimizerAlgo::kAdam;
  omega_opt_.learning_rate = config_.omega_lr;
}

PolicySearch::TrainBatch PolicySearch::build_train_batch(Rng& rng, std::size_t sub_policy) {
  const std::size_t n_pos = config_.positions;
  const std::size_t n_cand = config_.candidates.size();
  std::vector<const Sample*> base;
  for (std::size_t i = 0; i < config_.batch_size; ++i) {
    base.push_back(&train_[uniform_index(rng, train_.size())]);
  }
  TrainBatch batch;
  batch.chosen.resize(n_pos);
  for (std::size_t n = 0; n < n_pos; ++n) {
    // Concrete draws for every other position.
    std::vector<long> fixed(n_pos, -1);
    for (std::size_t m = 0; m < n_pos; ++m) {
      if (m == n) continue;
      const std::size_t slot = alpha_.slot(sub_policy, m);
      const auto w = alpha_.weights(slot);
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const std::size_t o = pick(rng);
      if (uniform01(rng) < alpha_.probability(slot)) fixed[m] = static_cast<long>(o);
    }
    std::vector<long> in_play;
    if (config_.candidate_subsample > 0 && config_.candidate_subsample < n_cand) {
      std::vector<std::size_t> all(n_cand);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(config_.candidate_subsample);
      std::sort(all.begin(), all.end());
      in_play.assign(all.begin(), all.end());
    } else {
      in_play.resize(n_cand);
      std::iota(in_play.begin(), in_play.end(), 0L);
    }
    batch.chosen[n] = in_play;
    std::vector<long> variants{-1};
    variants.insert(variants.end(), in_play.begin(), in_play.end());
    const std::uint64_t group_seed = rng();
    for (long candidate : variants) {
      Group group{alpha_.slot(sub_policy, n), candidate, batch.samples.size(), base.size()};
      for (std::size_t i = 0; i < base.size(); ++i) {
        // Same per-sample stream for every variant, so variants differ only
        // in the operation at this position.
        Rng srng(derive_seed(group_seed, {i}));
        Sample s = *base[i];
        for (std::size_t m = 0; m < n_pos; ++m) {
          const long op = m == n ? candidate : fixed[m];
          if (op < 0) continue;
          const Candidate& c = config_.candidates[static_cast<std::size_t>(op)];
          try {
            s = apply_op(s, {c.kind, 1.0, c.magnitude}, srng, config_.ranges);
          } catch (const std::exception& e) {
            spdlog::warn("search: candidate {} failed on '{}': {}",
                         config_.candidates.label(static_cast<std::size_t>(op)), s.id, e.what());
          }
        }
        batch.samples.push_back(std::move(s));
      }
      batch.groups.push_back(group);
    }
  }
  const int stride = network_.config().heatmap_stride;
  const auto h = static_cast<std::size_t>(network_.config().heatmap_height());
  const auto w = static_cast<std::size_t>(network_.config().heatmap_width());
  TargetOptions target = config_.target;
  target.stride = stride;
  batch.targets = render_targets(batch.samples, h, w, target);
  std::vector<const Image*> images;
  for (const Sample& s : batch.samples) images.push_back(&s.image);
  batch.images = images_to_tensor(images);
  return batch;
}

std::vector<double> PolicySearch::sample_weights(const TrainBatch& batch) {
  std::vector<double> c(batch.samples.size(), 0.0);
  const double n_pos = static_cast<double>(config_.positions);
  for (const Group& g : batch.groups) {
    const double p = alpha_.probability(g.slot);
    double coef;
    if (g.candidate < 0) {
      coef = 1.0 - p;
    } else {
      const std::size_t n = g.slot % config_.positions;
      const double scale = static_cast<double>(config_.candidates.size()) /
                           static_cast<double>(batch.chosen[n].size());
      coef = p * alpha_.weights(g.slot)[static_cast<std::size_t>(g.candidate)] * scale;
    }
    for (std::size_t i = g.first; i < g.first + g.count; ++i) {
      c[i] = coef / (n_pos * static_cast<double>(g.count));
    }
  }
  return c;
}

std::vector<double> PolicySearch::sample_losses(const TrainBatch& batch, Mode mode,
                                                const std::vector<double>* weights) {
  if (weights == nullptr) {
    NoGradGuard no_grad;
    const P2NetOutput out = network_.forward(batch.images, mode);
    const Tensor l = per_sample_pose_loss(out.parallel, out.refined, batch.targets, config_.alpha_k);
    return {l.data().begin(), l.data().end()};
  }
  const P2NetOutput out = network_.forward(batch.images, mode);
  const Tensor l = per_sample_pose_loss(out.parallel, out.refined, batch.targets, config_.alpha_k);
  backward(sum(mul(l, Tensor::from_data({weights->size()}, *weights))));
  return {l.data().begin(), l.data().end()};
}

Tensor PolicySearch::alpha_objective(const TrainBatch& batch, const std::vector<double>& losses) {
  const std::size_t n_cand = config_.candidates.size();
  std::vector<Tensor> per_position;
  for (std::size_t n = 0; n < config_.positions; ++n) {
    double id_loss = 0.0;
    std::vector<double> cand(n_cand, 0.0);
    std::size_t slot = 0;
    const double scale =
        static_cast<double>(n_cand) / static_cast<double>(batch.chosen[n].size());
    for (const Group& g : batch.groups) {
      if (g.slot % config_.positions != n) continue;
      slot = g.slot;
      double mean = 0.0;
      for (std::size_t i = g.first; i < g.first + g.count; ++i) mean += losses[i];
      mean /= static_cast<double>(g.count);
      if (g.candidate < 0) {
        id_loss = mean;
      } else {
        cand[static_cast<std::size_t>(g.candidate)] = scale * mean;
      }
    }
    const Tensor w = softmax(select_row(alpha_.logits(), slot));
    const Tensor mix = sum(mul(w, Tensor::from_data({n_cand}, cand)));
    const Tensor p = reshape(sigmoid(select_row(alpha_.probability_logits(), slot)), {});
    per_position.push_back(add_scalar(mul(p, add_scalar(mix, -id_loss)), id_loss));
  }
  return scalar_mul(sum(stack_scalars(per_position)), 1.0 / static_cast<double>(config_.positions));
}

double PolicySearch::pixel_mix_loss(const TrainBatch& batch, bool backprop) {
  std::optional<NoGradGuard> guard;
  if (!backprop) guard.emplace();
  const std::size_t n_cand = config_.candidates.size();
  const auto& shape = batch.images.shape();
  const std::size_t per_image = shape[1] * shape[2] * shape[3];
  const int stride = network_.config().heatmap_stride;
  auto slice = [&](std::size_t first, std::size_t count) {
    const auto data = batch.images.data();
    return Tensor::from_data({count, shape[1], shape[2], shape[3]},
                             {data.begin() + static_cast<long>(first * per_image),
                              data.begin() + static_cast<long>((first + count) * per_image)});
  };
  Tensor total;
  for (std::size_t n = 0; n < config_.positions; ++n) {
    const double scale =
        static_cast<double>(n_cand) / static_cast<double>(batch.chosen[n].size());
    Tensor mixed_candidates;
    Tensor identity;
    std::size_t slot = 0, first = 0, count = 0;
    for (const Group& g : batch.groups) {
      if (g.slot % config_.positions != n) continue;
      slot = g.slot;
      if (g.candidate < 0) {
        identity = slice(g.first, g.count);
        first = g.first;
        count = g.count;
        continue;
      }
      const Tensor w = softmax(select_row(alpha_.logits(), g.slot));
      const Tensor term =
          mul(scalar_mul(element(w, static_cast<std::size_t>(g.candidate)), scale),
              slice(g.first, g.count));
      mixed_candidates = mixed_candidates.defined() ? add(mixed_candidates, term) : term;
    }
    const Tensor p = select_row(sigmoid(alpha_.probability_logits()), slot);
    // p * mix + (1 - p) * x
    const Tensor input = add(identity, mul(p, sub(mixed_candidates, identity)));
    std::vector<Sample> targets_src(batch.samples.begin() + static_cast<long>(first),
                                    batch.samples.begin() + static_cast<long>(first + count));
    TargetOptions target = config_.target;
    target.stride = stride;
    const TargetBatch targets =
        render_targets(targets_src, static_cast<std::size_t>(network_.config().heatmap_height()),
                       static_cast<std::size_t>(network_.config().heatmap_width()), target);
    const P2NetOutput out = network_.forward(input, Mode::kTrain);
    const Tensor l = mean(per_sample_pose_loss(out.parallel, out.refined, targets, config_.alpha_k));
    total = total.defined() ? add(total, l) : l;
  }
  total = scalar_mul(total, 1.0 / static_cast<double>(config_.positions));
  if (backprop) backward(total);
  return total.item();
}

TargetBatch PolicySearch::val_targets(const std::vector<const Sample*>& batch,
                                      Tensor& images) const {
  std::vector<Sample> samples;
  std::vector<const Image*> ptrs;
  for (const Sample* s : batch) {
    samples.push_back(*s);
    ptrs.push_back(&s->image);
  }
  images = images_to_tensor(ptrs);
  TargetOptions target = config_.target;
  target.stride = network_.config().heatmap_stride;
  return render_targets(samples, static_cast<std::size_t>(network_.config().heatmap_height()),
                        static_cast<std::size_t>(network_.config().heatmap_width()), target);
}

SearchRecord PolicySearch::make_record(double train_loss, double val_loss) const {
  SearchRecord r;
  r.step = step_;
  r.train_loss = train_loss;
  r.val_loss = val_loss;
  for (std::size_t s = 0; s < alpha_.slots(); ++s) {
    r.entropy.push_back(alpha_.entropy(s));
    r.probability.push_back(alpha_.probability(s));
  }
  r.logits.assign(alpha_.logits().data().begin(), alpha_.logits().data().end());
  return r;
}

SearchRecord PolicySearch::initial_record() {
  const auto buffers = network_.store().snapshot_buffers();
  Rng rng(derive_seed(seed_, {hash_label("search"), 0}));
  const std::size_t k = uniform_index(rng, config_.sub_policies);
  const TrainBatch batch = build_train_batch(rng, k);
  double train_loss = 0.0;
  if (config_.pixel_mixing) {
    train_loss = pixel_mix_loss(batch, false);
  } else {
    const auto losses = sample_losses(batch, Mode::kTrain, nullptr);
    const auto c = sample_weights(batch);
    train_loss = std::inner_product(c.begin(), c.end(), losses.begin(), 0.0);
  }
  std::vector<const Sample*> vb;
  for (std::size_t i = 0; i < config_.val_batch_size; ++i) {
    vb.push_back(&val_[uniform_index(rng, val_.size())]);
  }
  Tensor images;
  const TargetBatch targets = val_targets(vb, images);
  double val_loss = 0.0;
  {
    NoGradGuard no_grad;
    const P2NetOutput out = network_.forward(images, Mode::kTrain);
    val_loss = mean(per_sample_pose_loss(out.parallel, out.refined, targets, config_.alpha_k)).item();
  }
  network_.store().restore_buffers(buffers);
  return make_record(train_loss, val_loss);
}

SearchRecord PolicySearch::step() {
  auto& params = network_.store().parameters();
  const auto buffers = network_.store().snapshot_buffers();
  Rng rng(derive_seed(seed_, {hash_label("search"), step_ + 1}));
  const std::size_t k = uniform_index(rng, config_.sub_policies);
  const TrainBatch batch = build_train_batch(rng, k);
  std::vector<const Sample*> vb;
  for (std::size_t i = 0; i < config_.val_batch_size; ++i) {
    vb.push_back(&val_[uniform_index(rng, val_.size())]);
  }
  Tensor val_images;
  const TargetBatch val_target = val_targets(vb, val_images);
  const std::vector<Tensor> alpha_tensors = alpha_.tensors();

  BilevelObjective obj;
  obj.omega = params;
  obj.alpha = alpha_tensors;
  obj.train_omega_grad = [&](std::vector<std::vector<double>>& g) {
    zero_grads(params);
    double loss;
    if (config_.pixel_mixing) {
      loss = pixel_mix_loss(batch, true);
    } else {
      const auto c = sample_weights(batch);
      const auto losses = sample_losses(batch, Mode::kTrain, &c);
      loss = std::inner_product(c.begin(), c.end(), losses.begin(), 0.0);
    }
    g = copy_grads(params);
    zero_all(alpha_tensors);
    return loss;
  };
  obj.val_omega_grad = [&](std::vector<std::vector<double>>& g) {
    zero_grads(params);
    const P2NetOutput out = network_.forward(val_images, Mode::kTrain);
    const Tensor loss =
        mean(per_sample_pose_loss(out.parallel, out.refined, val_target, config_.alpha_k));
    backward(loss);
    g = copy_grads(params);
    return loss.item();
  };
  obj.train_alpha_grad = [&](std::vector<std::vector<double>>& g) {
    zero_all(alpha_tensors);
    double loss;
    if (config_.pixel_mixing) {
      loss = pixel_mix_loss(batch, true);
      zero_grads(params);
    } else {
      const auto losses = sample_losses(batch, Mode::kTrain, nullptr);
      const Tensor objective = alpha_objective(batch, losses);
      backward(objective);
      loss = objective.item();
    }
    g = copy_grads(alpha_tensors);
    return loss;
  };

  const bool update_alpha = step_ >= config_.warmup_steps;
  Hypergradient hg;
  if (update_alpha) {
    hg = hypergradient(obj, config_.zeta, config_.eps_scale);
  } else {
    hg.inner = inner_step(obj, config_.zeta);
    std::vector<std::vector<double>> g;
    hg.val_loss = obj.val_omega_grad(g);
    for (const Tensor& a : alpha_tensors) hg.alpha_grad.emplace_back(a.numel(), 0.0);
  }
  network_.store().restore_buffers(buffers);

  const double threshold = config_.divergence_threshold;
  if (!std::isfinite(hg.inner.train_loss) || !std::isfinite(hg.val_loss) ||
      hg.inner.train_loss > threshold || hg.val_loss > threshold || !all_finite(hg.alpha_grad)) {
    std::ostringstream os;
    os << "search diverged at step " << step_ + 1 << ": train loss " << hg.inner.train_loss
       << ", val loss " << hg.val_loss << ", |g| " << hg.grad_norm;
    throw NumericError(os.str());
  }

  if (update_alpha) {
    std::vector<Tensor> a = alpha_tensors;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i].zero_grad();
      auto dst = a[i].mutable_grad();
      std::copy(hg.alpha_grad[i].begin(), hg.alpha_grad[i].end(), dst.begin());
    }
    optimizer_step(a, alpha_opt_);
    zero_all(a);
  }
  last_hyper_ = hg.alpha_grad;

  // The omega update reuses the training gradient from the inner step.
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].zero_grad();
    auto dst = params[i].mutable_grad();
    std::copy(hg.inner.train_grad[i].begin(), hg.inner.train_grad[i].end(), dst.begin());
  }
  optimizer_step(params, omega_opt_);
  zero_grads(params);
  ++step_;
  return make_record(hg.inner.train_loss, hg.val_loss);
}

std::vector<SearchRecord> PolicySearch::run(
    const std::function<void(const SearchRecord&)>& on_record) {
  std::vector<SearchRecord> records;
  records.push_back(initial_record());
  if (on_record) on_record(records.back());
  while (step_ < config_.budget) {
    records.push_back(step());
    if (on_record) on_record(records.back());
  }
  return records;
}

std::vector<double> smooth_series(const std::vector<double>& values, std::size_t window) {
  if (window == 0) throw ContractError("smooth_series: window must be positive");
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

}  // namespace p2net
