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
#include <vector>

#include "p2net/tensor.hpp"

namespace p2net {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

// Binary container of named arrays, little-endian throughout:
//   8 bytes   magic "P2NETCKP"
//   u32       format version (1)
//   u32       array count
//   per array: u32 name length, name bytes, u32 rank, u64 extents[rank],
//              f64 values[product of extents]
// Arrays are written in the order given, so identical inputs give identical
// bytes.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace p2net
