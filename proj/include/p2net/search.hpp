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

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "p2net/augment.hpp"
#include "p2net/losses.hpp"
#include "p2net/network.hpp"
#include "p2net/optimizer.hpp"
#include "p2net/tensor.hpp"

namespace p2net {

struct Candidate {
  AugKind kind = AugKind::kBrightness;
  double magnitude = 0.0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

class CandidateSet {
 public:
  CandidateSet() = default;
  explicit CandidateSet(std::vector<Candidate> items);

  // Every kind at every bin; kinds without a magnitude appear once.
  static CandidateSet from_bins(const std::vector<AugKind>& kinds, const std::vector<double>& bins);
  static CandidateSet default_set();

  std::size_t size() const { return items_.size(); }
  const Candidate& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Candidate>& items() const { return items_; }
  bool photometric_only() const;
  std::string label(std::size_t i) const;

 private:
  std::vector<Candidate> items_;
};

// Logits for K sub-policies x N positions (one row per slot, slot = k * N + n)
// over |O| candidates, plus one probability logit per slot.
class Alpha {
 public:
  Alpha() = default;
  Alpha(std::size_t sub_policies, std::size_t positions, std::size_t candidates);

  std::size_t sub_policies() const { return sub_policies_; }
  std::size_t positions() const { return positions_; }
  std::size_t slots() const { return sub_policies_ * positions_; }
  std::size_t candidates() const { return candidates_; }
  std::size_t slot(std::size_t k, std::size_t n) const { return k * positions_ + n; }

  Tensor& logits() { return logits_; }                  // [slots, |O|]
  const Tensor& logits() const { return logits_; }
  Tensor& probability_logits() { return prob_logits_; }  // [slots, 1]
  const Tensor& probability_logits() const { return prob_logits_; }

  std::vector<double> weights(std::size_t slot) const;  // softmax of the row
  double probability(std::size_t slot) const;           // logistic of the logit
  double entropy(std::size_t slot) const;               // nats
  std::vector<Tensor> tensors() const { return {logits_, prob_logits_}; }

 private:
  std::size_t sub_policies_ = 0;
  std::size_t positions_ = 0;
  std::size_t candidates_ = 0;
  Tensor logits_;
  Tensor prob_logits_;
};

// Per slot: argmax candidate (ties to the lowest index), P = logistic(logit).
Policy discretize(const Alpha& alpha, const CandidateSet& candidates);

// Softmax-weighted sum of per-candidate losses.
Tensor mix_candidate_losses(const Tensor& alpha_row, const std::vector<Tensor>& losses);
// L_id + p * (mix - L_id) with p = logistic(probability_logit).
Tensor relaxed_loss(const Tensor& alpha_row, const Tensor& probability_logit,
                    const std::vector<Tensor>& candidate_losses, const Tensor& identity_loss);

// Generic bilevel problem. Each callback evaluates at the current values of
// the omega (and alpha) tensors and returns the loss value.
struct BilevelObjective {
  std::vector<Tensor> omega;
  std::vector<Tensor> alpha;
  std::function<double(std::vector<std::vector<double>>& grad_omega)> train_omega_grad;
  std::function<double(std::vector<std::vector<double>>& grad_omega)> val_omega_grad;
  std::function<double(std::vector<std::vector<double>>& grad_alpha)> train_alpha_grad;

  // Callbacks built from scalar loss closures via backward().
  static BilevelObjective from_losses(std::vector<Tensor> omega, std::vector<Tensor> alpha,
                                      std::function<Tensor()> train_loss,
                                      std::function<Tensor()> val_loss);
};

struct InnerStep {
  std::vector<std::vector<double>> omega_prime;
  std::vector<std::vector<double>> train_grad;
  double train_loss = 0.0;
};

// omega' = omega - zeta * grad L_train. omega itself is left unchanged.
// Throws NumericError on a non-finite gradient.
InnerStep inner_step(BilevelObjective& objective, double zeta);

struct Hypergradient {
  std::vector<std::vector<double>> alpha_grad;
  InnerStep inner;
  double val_loss = 0.0;  // at omega'
  double grad_norm = 0.0;
  double epsilon = 0.0;
};

// -zeta * (grad_alpha L_train(w+) - grad_alpha L_train(w-)) / (2 eps) with
// w+- = omega +- eps * g, g = grad L_val(omega'), eps = eps_scale / |g|.
// Returns zeros when |g| = 0.
Hypergradient hypergradient(BilevelObjective& objective, double zeta, double eps_scale);

struct SearchConfig {
  CandidateSet candidates = CandidateSet::default_set();
  std::size_t sub_policies = 3;
  std::size_t positions = 2;
  double zeta = 0.05;
  double eps_scale = 0.01;
  double alpha_lr = 3e-3;
  double omega_lr = 1e-3;
  std::size_t budget = 100;
  std::size_t warmup_steps = 0;
  std::size_t batch_size = 4;
  std::size_t val_batch_size = 8;
  std::size_t candidate_subsample = 0;  // 0 keeps every candidate
  bool pixel_mixing = false;
  int alpha_k = 3;
  TargetOptions target;
  MagnitudeRanges ranges;
  double divergence_threshold = 1e6;

  void validate() const;
};

struct SearchRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> entropy;
  std::vector<double> logits;       // row-major [slots, |O|]
  std::vector<double> probability;  // per slot
};

// Alternates omega updates on the relaxed augmented loss with alpha updates
// from the hypergradient. train and val must be disjoint; val is never
// augmented.
class PolicySearch {
 public:
  PolicySearch(P2Net& network, const std::vector<Sample>& train, const std::vector<Sample>& val,
               SearchConfig config, std::uint64_t seed);

  // Record for the initial state (step 0) without updating anything.
  SearchRecord initial_record();
  // One outer step; returns its record. Throws NumericError on divergence.
  SearchRecord step();
  std::vector<SearchRecord> run(const std::function<void(const SearchRecord&)>& on_record = {});

  const Alpha& alpha() const { return alpha_; }
  Alpha& alpha() { return alpha_; }
  Policy policy() const { return discretize(alpha_, config_.candidates); }
  std::size_t steps_done() const { return step_; }
  const SearchConfig& config() const { return config_; }
  // Hypergradient from the most recent step, per alpha tensor.
  const std::vector<std::vector<double>>& last_hypergradient() const { return last_hyper_; }

 private:
  struct Group {
    std::size_t slot = 0;
    long candidate = -1;  // -1: the position is skipped
    std::size_t first = 0;
    std::size_t count = 0;
  };
  struct TrainBatch {
    std::vector<Sample> samples;
    std::vector<Group> groups;
    std::vector<std::vector<long>> chosen;  // per position: candidates in play
    TargetBatch targets;
    Tensor images;
  };

  TrainBatch build_train_batch(Rng& rng, std::size_t sub_policy);
  TargetBatch val_targets(const std::vector<const Sample*>& batch, Tensor& images) const;
  std::vector<double> sample_losses(const TrainBatch& batch, Mode mode,
                                    const std::vector<double>* weights);
  Tensor alpha_objective(const TrainBatch& batch, const std::vector<double>& losses);
  std::vector<double> sample_weights(const TrainBatch& batch);
  double pixel_mix_loss(const TrainBatch& batch, bool backprop);
  SearchRecord make_record(double train_loss, double val_loss) const;

  P2Net& network_;
  const std::vector<Sample>& train_;
  const std::vector<Sample>& val_;
  SearchConfig config_;
  std::uint64_t seed_;
  Alpha alpha_;
  OptimizerState alpha_opt_;
  OptimizerState omega_opt_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> last_hyper_;
};

// Row entropies, averaged per slot over a trailing window.
std::vector<double> smooth_series(const std::vector<double>& values, std::size_t window);

}  // namespace p2net
