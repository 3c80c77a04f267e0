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

#include "p2net/policy_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "p2net/errors.hpp"

namespace p2net {

using nlohmann::json;

std::string policy_to_json(const Policy& policy) {
  json root;
  root["sub_policies"] = json::array();
  for (const SubPolicy& sub : policy.sub_policies) {
    json ops = json::array();
    for (const AugOpSpec& op : sub.ops) {
      ops.push_back({{"kind", std::string(to_string(op.kind))},
                     {"probability", op.probability},
                     {"magnitude", op.magnitude}});
    }
    root["sub_policies"].push_back(std::move(ops));
  }
  return root.dump(2) + "\n";
}

Policy policy_from_json(const std::string& text) {
  Policy policy;
  try {
    const json root = json::parse(text);
    for (const json& sub : root.at("sub_policies")) {
      SubPolicy sp;
      for (const json& op : sub) {
        AugOpSpec spec;
        spec.kind = aug_kind_from_string(op.at("kind").get<std::string>());
        spec.probability = op.at("probability").get<double>();
        spec.magnitude = op.at("magnitude").get<double>();
        spec.validate();
        sp.ops.push_back(spec);
      }
      policy.sub_policies.push_back(std::move(sp));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed policy JSON: ") + e.what());
  }
  return policy;
}

void save_policy(const std::filesystem::path& path, const Policy& policy) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write policy " + path.string());
  out << policy_to_json(policy);
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read policy " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return policy_from_json(buffer.str());
}

Policy identity_policy(std::size_t sub_policies, std::size_t ops) {
  Policy policy;
  for (std::size_t k = 0; k < sub_policies; ++k) {
    SubPolicy sp;
    for (std::size_t j = 0; j < ops; ++j) sp.ops.push_back({AugKind::kBrightness, 0.0, 5.0});
    policy.sub_policies.push_back(std::move(sp));
  }
  return policy;
}

}  // namespace p2net
