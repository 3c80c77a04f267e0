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

#include <filesystem>
#include <string>

#include "p2net/augment.hpp"

namespace p2net {

// {"sub_policies": [[{"kind": "Rotate", "probability": 0.5, "magnitude": 7.5}, ...], ...]}
std::string policy_to_json(const Policy& policy);
Policy policy_from_json(const std::string& text);

void save_policy(const std::filesystem::path& path, const Policy& policy);
Policy load_policy(const std::filesystem::path& path);

// K sub-policies of N ops that never fire.
Policy identity_policy(std::size_t sub_policies = 3, std::size_t ops = 2);

}  // namespace p2net
