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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "p2net/gradcheck.hpp"

namespace p2net {

struct GradcheckFamily {
  std::string name;
  // Builds one seeded random instance and checks it.
  std::function<GradcheckOutcome(Rng& rng)> run_instance;
};

const std::vector<GradcheckFamily>& gradcheck_registry();

struct FamilyReport {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t kinks_skipped = 0;
  double seconds = 0.0;
  bool passed() const { return failures == 0 && instances > 0; }
};

FamilyReport run_family(const GradcheckFamily& family, std::size_t instances, std::uint64_t seed,
                        double tolerance = 1e-5);
std::vector<FamilyReport> run_gradcheck_suite(std::size_t instances, std::uint64_t seed,
                                              double tolerance = 1e-5);

}  // namespace p2net
