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

#include <memory>
#include <string>
#include <vector>

#include "p2net/checkpoint.hpp"
#include "p2net/image.hpp"
#include "p2net/ops.hpp"
#include "p2net/random.hpp"

namespace p2net {

using Mode = BatchNormMode;

struct NetworkConfig {
  int input_height = 64;
  int input_width = 64;
  int input_channels = 3;
  // One entry per backbone stage; the first stage runs at the heatmap stride
  // and every further stage halves the resolution.
  std::vector<int> backbone_widths{16, 32, 64};
  int pyramid_width = 32;
  int parallel_stages = 2;
  int dilation = 2;
  int keypoints = 5;
  int heatmap_stride = 4;
  bool apm_per_branch = false;

  // Throws ContractError naming the offending field.
  void validate() const;
  int levels() const { return static_cast<int>(backbone_widths.size()); }
  int total_stride() const { return heatmap_stride << (levels() - 1); }
  int heatmap_height() const { return input_height / heatmap_stride; }
  int heatmap_width() const { return input_width / heatmap_stride; }

  // Full-scale preset (384x288 crops, four stages). Constructible but far
  // too slow for this CPU engine.
  static NetworkConfig reference_scale();
};

// Ordered collection of named trainable tensors and batch-norm buffers.
// Registration order fixes checkpoint and optimizer order.
class ParameterStore {
 public:
  Tensor add_parameter(const std::string& name, Tensor value);
  BatchNormBuffers* add_buffers(const std::string& name, std::size_t channels);

  std::vector<Tensor>& parameters() { return parameters_; }
  const std::vector<Tensor>& parameters() const { return parameters_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const;

  // "param/<name>", "bn_mean/<name>", "bn_var/<name>" and "bn_trained/<name>".
  std::vector<NamedArray> export_arrays() const;
  // Every registered array must be present with a matching shape.
  void import_arrays(const std::vector<NamedArray>& arrays);

  // Deep copies of parameter values (not buffers), and the inverse.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  // Copies of the batch-norm running statistics, and the inverse.
  std::vector<BatchNormBuffers> snapshot_buffers() const;
  void restore_buffers(const std::vector<BatchNormBuffers>& values);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> parameters_;
  std::vector<std::string> buffer_names_;
  std::vector<std::unique_ptr<BatchNormBuffers>> buffers_;
};

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  // Kaiming fan-in normal weights, zero bias.
  Conv2dLayer(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
              int kernel, int stride, int dilation, Rng& rng, bool with_bias = true);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
  int stride = 1;
  int dilation = 1;
};

class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(ParameterStore& store, const std::string& name, int channels);
  Tensor forward(const Tensor& x, Mode mode) const;

  Tensor gamma;
  Tensor beta;
  BatchNormBuffers* buffers = nullptr;
};

// conv (no bias) -> batch norm -> optional ReLU
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
            int kernel, int stride, int dilation, bool activate, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) const;

  Conv2dLayer conv;
  BatchNormLayer norm;
  bool activate = true;
};

// Multi-resolution feature list whose consecutive levels halve in both
// extents (R_r = 2 R_{r+1}). The constructor enforces the chain.
class FeaturePyramid {
 public:
  explicit FeaturePyramid(std::vector<Tensor> levels);
  const std::vector<Tensor>& levels() const { return levels_; }
  std::size_t size() const { return levels_.size(); }
  const Tensor& operator[](std::size_t i) const { return levels_[i]; }

 private:
  std::vector<Tensor> levels_;
};

// Branch tensors of one parallel stage. Besides the halving chain, each
// branch must keep the resolution it had in the previous stage.
class ParallelStageState {
 public:
  explicit ParallelStageState(std::vector<Tensor> branches,
                              const ParallelStageState* previous = nullptr);
  const std::vector<Tensor>& branches() const { return branches_; }

 private:
  std::vector<Tensor> branches_;
};

void check_halving_chain(const std::vector<Tensor>& levels, const char* what);

class Backbone {
 public:
  Backbone() = default;
  Backbone(ParameterStore& store, const NetworkConfig& config, Rng& rng);
  // Stage outputs, highest resolution first.
  std::vector<Tensor> forward(const Tensor& images, Mode mode) const;

 private:
  struct Stage {
    ConvBnAct entry;
    ConvBnAct body;
  };
  std::vector<ConvBnAct> stem_;
  std::vector<Stage> stages_;
  int total_stride_ = 1;
};

// Lateral 1x1 convs to a common width plus top-down nearest upsampling and
// element-wise sums.
class PyramidTopDown {
 public:
  PyramidTopDown() = default;
  PyramidTopDown(ParameterStore& store, const std::string& name, const std::vector<int>& widths,
                 int out_width, Rng& rng);
  FeaturePyramid forward(const std::vector<Tensor>& features) const;

 private:
  std::vector<Conv2dLayer> laterals_;
};

// Fuses every branch into every other: higher resolutions arrive through
// one strided 3x3 conv per halving, lower ones through a 1x1 conv and
// nearest upsampling, and the branch itself is added unchanged.
class ExchangeUnit {
 public:
  ExchangeUnit() = default;
  ExchangeUnit(ParameterStore& store, const std::string& name, int branches, int width, Rng& rng);
  std::vector<Tensor> forward(const std::vector<Tensor>& branches) const;

  int branch_count() const { return branches_; }
  // All transform weights and biases, for tests that need to zero them.
  std::vector<Tensor> transform_parameters() const;

 private:
  int branches_ = 0;
  // down_[t][s] for s < t: chain of t - s strided convs.
  std::vector<std::vector<std::vector<Conv2dLayer>>> down_;
  // up_[t][s] for s > t: 1x1 conv before upsampling by 2^(s - t).
  std::vector<std::vector<Conv2dLayer>> up_;
};

// Attention Partial Module: U = F * sigmoid(phi(GAP(F))).
class Apm {
 public:
  Apm() = default;
  Apm(ParameterStore& store, const std::string& name, int channels, Rng& rng);
  Tensor forward(const Tensor& features) const;
  // Per-channel scale, [B, C, 1, 1], each in (0, 1).
  Tensor channel_weights(const Tensor& features) const;

  Conv2dLayer phi;
};

// 1x1 reduce -> 3x3 dilated -> 1x1 expand, added back onto the input.
class DilatedBottleneck {
 public:
  DilatedBottleneck() = default;
  DilatedBottleneck(ParameterStore& store, const std::string& name, int width, int dilation,
                    Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) const;
  std::vector<Tensor> branch_parameters() const;

  ConvBnAct reduce;
  ConvBnAct dilated;
  ConvBnAct expand;
};

struct P2NetOutput {
  Tensor parallel;  // intermediate heatmaps, [B, K, H/stride, W/stride]
  Tensor refined;   // final heatmaps, same extents
};

class P2Net {
 public:
  P2Net(const NetworkConfig& config, std::uint64_t seed);
  P2Net(const P2Net&) = delete;
  P2Net& operator=(const P2Net&) = delete;

  P2NetOutput forward(const Tensor& images, Mode mode) const;

  const NetworkConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  const Backbone& backbone() const { return backbone_; }
  const PyramidTopDown& pyramid() const { return pyramid_; }

 private:
  NetworkConfig config_;
  ParameterStore store_;
  Backbone backbone_;
  PyramidTopDown pyramid_;
  struct ParallelStage {
    std::vector<ConvBnAct> convs;
    ExchangeUnit exchange;
  };
  std::vector<ParallelStage> stages_;
  Conv2dLayer parallel_head_;
  std::vector<std::vector<DilatedBottleneck>> refine_blocks_;
  std::vector<Apm> branch_apms_;
  Apm apm_;
  Conv2dLayer refine_head_;
};

// Stacks images into [B, C, H, W] with pixels mapped to (p - 127.5) / 63.75.
Tensor images_to_tensor(const std::vector<const Image*>& images);

}  // namespace p2net
