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

#include <vector>

#include "p2net/tensor.hpp"

namespace p2net {

// 2-D convolution over NCHW input with zero padding dilation*(k-1)/2, so a
// stride-1 output keeps the input extents and a stride-s output has
// ceil(H/s) x ceil(W/s). `bias` may be undefined.
//   input   [B, Cin, H, W]
//   weights [Cout, Cin, kh, kw], kh, kw in {1, 3}
//   bias    [Cout]
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              int stride = 1, int dilation = 1);

// output[b,c,y,x] = input[b,c,y/f,x/f].
Tensor nearest_upsample(const Tensor& input, int factor);

// [B,C,H,W] -> [B,C,1,1], the per-channel mean.
Tensor global_avg_pool(const Tensor& input);

// U[b,c,i,j] = F[b,c,i,j] * V[b,c]; V is [B,C,1,1].
Tensor channel_scale(const Tensor& features, const Tensor& scales);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise product; either operand may be a single-element tensor.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Concatenates along axis 1; every other extent must agree.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Softmax along the last axis.
Tensor softmax(const Tensor& x);

// Row `index` of a rank-2 tensor, as a rank-1 tensor.
Tensor select_row(const Tensor& matrix, std::size_t index);

// Packs single-element tensors into a rank-1 tensor.
Tensor stack_scalars(const std::vector<Tensor>& scalars);

// Same data, new extents with the same element count.
Tensor reshape(const Tensor& x, Shape shape);

enum class BatchNormMode { kTrain, kEval };

// Running statistics of one batch-norm layer. Not differentiated.
struct BatchNormBuffers {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool trained = false;
  bool warned_untrained = false;

  explicit BatchNormBuffers(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization over batch and spatial axes. Train mode uses
// batch statistics and folds them into `buffers` with
// running = momentum * running + (1 - momentum) * batch.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, BatchNormMode mode, double eps = 1e-5,
                  double momentum = 0.9);

}  // namespace p2net
