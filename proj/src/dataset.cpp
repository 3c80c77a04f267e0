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

#include "p2net/dataset.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "p2net/errors.hpp"

namespace p2net {

using nlohmann::json;

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

void save_dataset_info(const std::filesystem::path& root, const DatasetInfo& info) {
  json j;
  j["image_width"] = info.image_width;
  j["image_height"] = info.image_height;
  j["joints"] = info.joint_names;
  j["flip_pairs"] = json::array();
  for (const auto& [a, b] : info.flip.pairs) j["flip_pairs"].push_back({a, b});
  j["oks_k"] = info.oks_k;
  j["splits"] = info.splits;
  write_text(root / "dataset.json", j.dump(2) + "\n");
}

DatasetInfo load_dataset_info(const std::filesystem::path& root) {
  DatasetInfo info;
  try {
    const json j = json::parse(read_text(root / "dataset.json"));
    info.image_width = j.at("image_width").get<int>();
    info.image_height = j.at("image_height").get<int>();
    info.joint_names = j.at("joints").get<std::vector<std::string>>();
    for (const json& p : j.at("flip_pairs")) {
      info.flip.pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
    }
    info.oks_k = j.at("oks_k").get<std::vector<double>>();
    info.splits = j.at("splits").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError("malformed dataset.json in " + root.string() + ": " + e.what());
  }
  info.flip.validate(info.joint_names.size());
  return info;
}

std::filesystem::path image_relpath(const std::string& split, const std::string& id) {
  return std::filesystem::path("images") / split / (id + ".ppm");
}

std::string annotation_line(const Sample& s, const std::string& image_path) {
  json j;
  j["id"] = s.id;
  j["image"] = image_path;
  j["keypoints"] = json::array();
  for (std::size_t k = 0; k < s.keypoints.size(); ++k) {
    j["keypoints"].push_back({s.keypoints[k].x, s.keypoints[k].y, s.visibility[k]});
  }
  j["bbox"] = {s.bbox.x, s.bbox.y, s.bbox.width, s.bbox.height};
  j["head_size"] = s.head_size;
  return j.dump();
}

void save_annotations(const std::filesystem::path& root, const std::string& split,
                      const std::vector<Sample>& samples) {
  std::ostringstream os;
  for (const Sample& s : samples) {
    os << annotation_line(s, image_relpath(split, s.id).generic_string()) << "\n";
  }
  write_text(root / (split + ".jsonl"), os.str());
}

std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split) {
  std::ifstream in(root / (split + ".jsonl"));
  if (!in) throw IoError("cannot read " + (root / (split + ".jsonl")).string());
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::string>();
      for (const json& kp : j.at("keypoints")) {
        s.keypoints.push_back({kp.at(0).get<double>(), kp.at(1).get<double>()});
        s.visibility.push_back(kp.at(2).get<int>());
      }
      const json& b = j.at("bbox");
      s.bbox = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>()};
      s.head_size = j.at("head_size").get<double>();
      s.image = read_pnm(root / j.at("image").get<std::string>());
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ConfigError(split + ".jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
  std::ostringstream os;
  for (const Prediction& p : preds) {
    json j;
    j["id"] = p.id;
    j["keypoints"] = json::array();
    for (const DecodedKeypoint& kp : p.keypoints) j["keypoints"].push_back({kp.x, kp.y, kp.confidence});
    j["score"] = p.score;
    os << j.dump() << "\n";
  }
  write_text(path, os.str());
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Prediction> preds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      for (const json& kp : j.at("keypoints")) {
        p.keypoints.push_back({kp.at(0).get<double>(), kp.at(1).get<double>(), kp.at(2).get<double>()});
      }
      p.score = j.at("score").get<double>();
      preds.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ConfigError("malformed prediction line in " + path.string() + ": " + e.what());
    }
  }
  return preds;
}

}  // namespace p2net
