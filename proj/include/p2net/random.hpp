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
#include <initializer_list>
#include <random>
#include <string_view>

#include "p2net/tensor.hpp"

namespace p2net {

using Rng = std::mt19937_64;

// Stable child seed for an independent stream, e.g. (seed, "train", step).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);
std::uint64_t hash_label(std::string_view label);

double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
bool coin(Rng& rng);
// Uniform integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

}  // namespace p2net
