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

#include "p2net/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "p2net/errors.hpp"

namespace p2net {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Drops trailing "# ..." comments, which the INI reader keeps as value text.
std::string strip_inline_comments(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find(" #");
    if (hash != std::string::npos) line = line.substr(0, hash);
    out << line << "\n";
  }
  return out.str();
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::filesystem::path base) : tree_(tree), base_(std::move(base)) {
    static const std::set<std::string> kKnown = {"dataset",    "network", "training",
                                                 "search",     "evaluation", "augment"};
    for (const auto& [section, body] : tree_) {
      if (!kKnown.count(section)) throw ConfigError("unknown config section [" + section + "]");
      (void)body;
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    const auto value = tree_.get_optional<std::string>(key);
    if (!value) return fallback;
    const std::string text = trim(*value);
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
      if (text == "false" || text == "0" || text == "no" || text == "off") return false;
      throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      std::istringstream in(text);
      T parsed{};
      in >> parsed;
      if (!in || !(in >> std::ws).eof()) {
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (text.find('-') != std::string::npos) {
          throw ConfigError("config key '" + key + "' must be non-negative");
        }
      }
      return parsed;
    }
  }

  std::filesystem::path path(const std::string& key, const std::filesystem::path& fallback = {}) {
    const std::string text = get<std::string>(key, "");
    if (text.empty()) return fallback;
    std::filesystem::path p(text);
    return p.is_absolute() ? p : (base_ / p).lexically_normal();
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      for (const auto& [key, value] : body) {
        (void)value;
        const std::string full = section + "." + key;
        if (!used_.count(full)) throw ConfigError("unknown config key '" + full + "'");
      }
    }
  }

 private:
  const pt::ptree& tree_;
  std::filesystem::path base_;
  std::set<std::string> used_;
};

std::vector<AugKind> parse_kinds(const std::string& text) {
  std::vector<AugKind> kinds;
  for (const std::string& name : split_list(text)) {
    try {
      kinds.push_back(aug_kind_from_string(name));
    } catch (const std::exception&) {
      throw ConfigError("unknown augmentation kind '" + name + "'");
    }
  }
  return kinds;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    token = trim(token);
    if (!token.empty()) items.push_back(token);
  }
  return items;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> values;
  for (const std::string& item : split_list(text)) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse number '" + item + "'");
    }
  }
  return values;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> values;
  for (double v : parse_double_list(text)) {
    if (v != std::floor(v)) throw ConfigError("expected an integer list, got " + text);
    values.push_back(static_cast<int>(v));
  }
  return values;
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(strip_inline_comments(text));
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  Reader r(tree, base_dir);
  ExperimentConfig c;

  c.data_root = r.path("dataset.root", base_dir / "data");
  SynthConfig& d = c.dataset;
  d.image_width = r.get("dataset.image_width", d.image_width);
  d.image_height = r.get("dataset.image_height", d.image_height);
  d.joints = r.get("dataset.joints", d.joints);
  d.train_size = r.get("dataset.train_size", d.train_size);
  d.val_size = r.get("dataset.val_size", d.val_size);
  d.test_size = r.get("dataset.test_size", d.test_size);
  d.noise = r.get("dataset.noise", d.noise);
  d.rotation_train = r.get("dataset.rotation_train", d.rotation_train);
  d.rotation_val = r.get("dataset.rotation_val", d.rotation_val);
  d.rotation_test = r.get("dataset.rotation_test", d.rotation_test);
  d.figure_min = r.get("dataset.figure_min", d.figure_min);
  d.figure_max = r.get("dataset.figure_max", d.figure_max);
  d.oks_k = r.get("dataset.oks_k", d.oks_k);
  d.validate();

  NetworkConfig& n = c.network;
  n.input_width = d.image_width;
  n.input_height = d.image_height;
  n.keypoints = d.joints;
  const std::string widths = r.get<std::string>("network.backbone_widths", "");
  if (!widths.empty()) n.backbone_widths = parse_int_list(widths);
  n.pyramid_width = r.get("network.pyramid_width", n.pyramid_width);
  n.parallel_stages = r.get("network.parallel_stages", n.parallel_stages);
  n.dilation = r.get("network.dilation", n.dilation);
  n.heatmap_stride = r.get("network.heatmap_stride", n.heatmap_stride);
  n.apm_per_branch = r.get("network.apm_per_branch", n.apm_per_branch);
  try {
    n.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }

  TrainingConfig& t = c.training;
  const std::string opt = r.get<std::string>("training.optimizer", "adam");
  if (opt == "adam") {
    t.optimizer = OptimizerAlgo::kAdam;
  } else if (opt == "sgd") {
    t.optimizer = OptimizerAlgo::kSgd;
  } else {
    throw ConfigError("training.optimizer must be adam or sgd");
  }
  t.learning_rate = r.get("training.lr", t.learning_rate);
  t.weight_decay = r.get("training.weight_decay", t.weight_decay);
  t.batch_size = r.get("training.batch_size", t.batch_size);
  t.steps = r.get("training.steps", t.steps);
  t.alpha_k = r.get("training.alpha_k", t.alpha_k);
  t.sigma = r.get("training.sigma", t.sigma);
  t.policy = r.path("training.policy");
  t.val_every = r.get("training.val_every", t.val_every);
  t.val_samples = r.get("training.val_samples", t.val_samples);
  t.checkpoint_every = r.get("training.checkpoint_every", t.checkpoint_every);
  t.resume = r.path("training.resume");
  if (!(t.learning_rate > 0.0)) throw ConfigError("training.lr must be > 0");
  if (t.batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  if (t.alpha_k < 1 || t.alpha_k > d.joints) {
    throw ConfigError("training.alpha_k must lie in [1, joints]");
  }
  if (!(t.sigma > 0.0)) throw ConfigError("training.sigma must be > 0");

  SearchConfig& s = c.search;
  const std::string kinds = r.get<std::string>("search.kinds", "");
  const std::string bins = r.get<std::string>("search.bins", "");
  if (!kinds.empty() || !bins.empty()) {
    const auto kind_list =
        kinds.empty() ? std::vector<AugKind>(kAllAugKinds.begin(), kAllAugKinds.end())
                      : parse_kinds(kinds);
    const auto bin_list = bins.empty() ? std::vector<double>{2.5, 5.0, 7.5} : parse_double_list(bins);
    try {
      s.candidates = CandidateSet::from_bins(kind_list, bin_list);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("search candidates: ") + e.what());
    }
  }
  s.sub_policies = r.get("search.sub_policies", s.sub_policies);
  s.positions = r.get("search.positions", s.positions);
  s.zeta = r.get("search.zeta", s.zeta);
  s.eps_scale = r.get("search.eps_scale", s.eps_scale);
  s.alpha_lr = r.get("search.alpha_lr", s.alpha_lr);
  s.omega_lr = r.get("search.omega_lr", s.omega_lr);
  s.budget = r.get("search.budget", s.budget);
  s.warmup_steps = r.get("search.warmup_steps", s.warmup_steps);
  s.batch_size = r.get("search.batch_size", s.batch_size);
  s.val_batch_size = r.get("search.val_batch_size", s.val_batch_size);
  s.candidate_subsample = r.get("search.candidate_subsample", s.candidate_subsample);
  s.pixel_mixing = r.get("search.pixel_mixing", s.pixel_mixing);
  s.alpha_k = t.alpha_k;
  s.target.sigma = t.sigma;
  s.validate();

  EvalConfig& e = c.eval;
  const std::string k = r.get<std::string>("evaluation.oks_k", "");
  if (!k.empty()) {
    e.oks_k = parse_double_list(k);
    if (e.oks_k.size() == 1) e.oks_k.assign(static_cast<std::size_t>(d.joints), e.oks_k[0]);
    if (e.oks_k.size() != static_cast<std::size_t>(d.joints)) {
      throw ConfigError("evaluation.oks_k needs one value or one per joint");
    }
    for (double v : e.oks_k) {
      if (!(v > 0.0)) throw ConfigError("evaluation.oks_k values must be positive");
    }
  }
  e.flip = r.get("evaluation.flip", e.flip);
  e.smooth = r.get("evaluation.smooth", e.smooth);
  e.pckh_threshold = r.get("evaluation.pckh_threshold", e.pckh_threshold);
  e.split = r.get<std::string>("evaluation.split", e.split);
  e.max_samples = r.get("evaluation.max_samples", e.max_samples);
  e.batch_size = r.get("evaluation.batch_size", e.batch_size);
  e.checkpoint = r.path("evaluation.checkpoint");
  if (e.batch_size == 0) throw ConfigError("evaluation.batch_size must be >= 1");

  AugmentConfig& a = c.augment;
  a.policy = r.path("augment.policy");
  a.split = r.get<std::string>("augment.split", a.split);
  a.count = r.get("augment.count", a.count);

  r.reject_unknown();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto base = std::filesystem::absolute(path).parent_path();
  ExperimentConfig c = parse_config(buffer.str(), base);
  c.source = path;
  return c;
}

}  // namespace p2net
