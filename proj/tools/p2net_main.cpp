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

// Command-line entry point: synth, train, search, eval, augment, gradcheck.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "p2net/config.hpp"
#include "p2net/errors.hpp"
#include "p2net/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kContract = 4 };

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string data;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  cmd->add_option("--config", c.config, "Experiment config file")->required(config_required);
  cmd->add_option("--seed", c.seed, "Random seed")->required();
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--data", c.data, "Dataset directory (overrides dataset.root)");
}

p2net::ExperimentConfig load(const Common& c) {
  p2net::ExperimentConfig cfg = p2net::load_config(c.config);
  if (!c.data.empty()) cfg.data_root = std::filesystem::absolute(c.data);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"p2net: keypoint heatmap network with differentiable augmentation search"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  Common synth, train, search, eval, augment, gradcheck;

  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic stick-figure dataset");
  add_common(synth_cmd, synth);

  auto* train_cmd = app.add_subcommand("train", "Train the network");
  add_common(train_cmd, train);
  std::string resume, train_policy;
  std::optional<std::size_t> steps;
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_option("--policy", train_policy, "Augmentation policy JSON");
  train_cmd->add_option("--steps", steps, "Override training.steps");

  auto* search_cmd = app.add_subcommand("search", "Differentiable augmentation policy search");
  add_common(search_cmd, search);
  std::optional<std::size_t> budget;
  search_cmd->add_option("--budget", budget, "Override search.budget");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, eval);
  std::string checkpoint, split;
  bool oracle = false, no_flip = false;
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval_cmd->add_option("--split", split, "Dataset split (train, val, test)");
  eval_cmd->add_flag("--oracle", oracle, "Score ground-truth-rendered heatmaps instead");
  eval_cmd->add_flag("--no-flip", no_flip, "Disable flip averaging");

  auto* augment_cmd = app.add_subcommand("augment", "Write augmented previews with keypoint markers");
  add_common(augment_cmd, augment);
  std::string augment_policy;
  augment_cmd->add_option("--policy", augment_policy, "Augmentation policy JSON");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op family");
  add_common(gradcheck_cmd, gradcheck, false);
  std::size_t instances = 20;
  gradcheck_cmd->add_option("--instances", instances, "Random instances per family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  auto logger = spdlog::stderr_color_mt("p2net");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*synth_cmd) {
      p2net::run_synth(load(synth), synth.seed, synth.out);
    } else if (*train_cmd) {
      auto cfg = load(train);
      if (!resume.empty()) cfg.training.resume = std::filesystem::absolute(resume);
      if (!train_policy.empty()) cfg.training.policy = std::filesystem::absolute(train_policy);
      if (steps) cfg.training.steps = *steps;
      const auto result = p2net::run_train(cfg, train.seed, train.out);
      if (!result.losses.empty()) {
        spdlog::info("loss {:.6f} -> {:.6f}", result.losses.front(), result.losses.back());
      }
    } else if (*search_cmd) {
      auto cfg = load(search);
      if (budget) cfg.search.budget = *budget;
      p2net::run_search(cfg, search.seed, search.out);
    } else if (*eval_cmd) {
      auto cfg = load(eval);
      if (!checkpoint.empty()) cfg.eval.checkpoint = std::filesystem::absolute(checkpoint);
      if (!split.empty()) cfg.eval.split = split;
      if (no_flip) cfg.eval.flip = false;
      const auto r = p2net::run_eval(cfg, eval.seed, eval.out, oracle);
      std::cout << "AP " << r.ap.ap << " AP50 " << r.ap.ap50 << " AP75 " << r.ap.ap75 << " AR "
                << r.ap.ar << " PCKh " << r.pckh.total << "\n";
    } else if (*augment_cmd) {
      auto cfg = load(augment);
      if (!augment_policy.empty()) cfg.augment.policy = std::filesystem::absolute(augment_policy);
      p2net::run_augment(cfg, augment.seed, augment.out);
    } else if (*gradcheck_cmd) {
      if (!gradcheck.config.empty()) load(gradcheck);
      const bool ok = p2net::run_gradcheck(gradcheck.seed, gradcheck.out, instances);
      std::cout << (ok ? "gradcheck: all families pass" : "gradcheck: FAILURES") << "\n";
      return ok ? kOk : kNumeric;
    }
  } catch (const p2net::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const p2net::IoError& e) {
    spdlog::error("i/o error: {}", e.what());
    return kConfig;
  } catch (const p2net::NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumeric;
  } catch (const p2net::ContractError& e) {
    spdlog::error("contract violation: {}", e.what());
    return kContract;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
