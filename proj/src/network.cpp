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

#include "p2net/network.hpp"

#include <cmath>

#include "p2net/errors.hpp"

namespace p2net {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

std::string dims(const Tensor& t) { return shape_to_string(t.shape()); }

}  // namespace

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError("network config: " + what); };
  if (input_height <= 0 || input_width <= 0) fail("input extents must be positive");
  if (input_channels != 1 && input_channels != 3) fail("input_channels must be 1 or 3");
  if (backbone_widths.empty()) fail("at least one backbone stage is required");
  for (int w : backbone_widths) {
    if (w <= 0) fail("backbone widths must be positive");
  }
  if (pyramid_width <= 0) fail("pyramid_width must be positive");
  if (pyramid_width < 2) fail("pyramid_width must be >= 2 for the bottleneck reduction");
  if (parallel_stages < 0) fail("parallel_stages must be >= 0");
  if (dilation < 1) fail("dilation must be >= 1");
  if (keypoints <= 0) fail("keypoints must be positive");
  if (heatmap_stride < 2 || !is_power_of_two(heatmap_stride)) {
    fail("heatmap_stride must be a power of two >= 2");
  }
  const int stride = total_stride();
  if (input_height % stride != 0 || input_width % stride != 0) {
    const int ph = (input_height + stride - 1) / stride * stride;
    const int pw = (input_width + stride - 1) / stride * stride;
    fail("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
         " must be divisible by " + std::to_string(stride) + "; pad to " + std::to_string(ph) +
         "x" + std::to_string(pw));
  }
}

NetworkConfig NetworkConfig::reference_scale() {
  NetworkConfig c;
  c.input_height = 384;
  c.input_width = 288;
  c.backbone_widths = {256, 512, 1024, 2048};
  c.pyramid_width = 256;
  c.parallel_stages = 3;
  c.keypoints = 17;
  return c;
}

Tensor ParameterStore::add_parameter(const std::string& name, Tensor value) {
  value.set_requires_grad(true);
  names_.push_back(name);
  parameters_.push_back(value);
  return value;
}

BatchNormBuffers* ParameterStore::add_buffers(const std::string& name, std::size_t channels) {
  buffer_names_.push_back(name);
  buffers_.push_back(std::make_unique<BatchNormBuffers>(channels));
  return buffers_.back().get();
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters_) n += p.numel();
  return n;
}

std::vector<NamedArray> ParameterStore::export_arrays() const {
  std::vector<NamedArray> arrays;
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    const auto data = parameters_[i].data();
    arrays.push_back({"param/" + names_[i], parameters_[i].shape(), {data.begin(), data.end()}});
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    const BatchNormBuffers& b = *buffers_[i];
    arrays.push_back({"bn_mean/" + buffer_names_[i], {b.running_mean.size()}, b.running_mean});
    arrays.push_back({"bn_var/" + buffer_names_[i], {b.running_var.size()}, b.running_var});
    arrays.push_back({"bn_trained/" + buffer_names_[i], {1}, {b.trained ? 1.0 : 0.0}});
  }
  return arrays;
}

void ParameterStore::import_arrays(const std::vector<NamedArray>& arrays) {
  auto fetch = [&arrays](const std::string& name, const Shape& shape) -> const NamedArray& {
    const NamedArray* found = find_array(arrays, name);
    if (found == nullptr) throw ContractError("checkpoint is missing '" + name + "'");
    if (found->shape != shape) {
      throw ShapeError("checkpoint array '" + name + "' has shape " +
                       shape_to_string(found->shape) + ", expected " + shape_to_string(shape));
    }
    return *found;
  };
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    const NamedArray& a = fetch("param/" + names_[i], parameters_[i].shape());
    std::copy(a.data.begin(), a.data.end(), parameters_[i].mutable_data().begin());
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    BatchNormBuffers& b = *buffers_[i];
    const Shape shape{b.running_mean.size()};
    b.running_mean = fetch("bn_mean/" + buffer_names_[i], shape).data;
    b.running_var = fetch("bn_var/" + buffer_names_[i], shape).data;
    b.trained = fetch("bn_trained/" + buffer_names_[i], {1}).data[0] != 0.0;
  }
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> values;
  values.reserve(parameters_.size());
  for (const Tensor& p : parameters_) values.emplace_back(p.data().begin(), p.data().end());
  return values;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != parameters_.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = parameters_[i].mutable_data();
    if (dst.size() != values[i].size()) throw ShapeError("restore: parameter size mismatch");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

std::vector<BatchNormBuffers> ParameterStore::snapshot_buffers() const {
  std::vector<BatchNormBuffers> values;
  values.reserve(buffers_.size());
  for (const auto& b : buffers_) values.push_back(*b);
  return values;
}

void ParameterStore::restore_buffers(const std::vector<BatchNormBuffers>& values) {
  if (values.size() != buffers_.size()) throw ShapeError("restore_buffers: count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) *buffers_[i] = values[i];
}

Conv2dLayer::Conv2dLayer(ParameterStore& store, const std::string& name, int in_channels,
                         int out_channels, int kernel, int stride_, int dilation_, Rng& rng,
                         bool with_bias)
    : stride(stride_), dilation(dilation_) {
  const auto cin = static_cast<std::size_t>(in_channels);
  const auto cout = static_cast<std::size_t>(out_channels);
  const auto k = static_cast<std::size_t>(kernel);
  const double fan_in = static_cast<double>(cin * k * k);
  weight = store.add_parameter(name + ".weight",
                               random_normal({cout, cin, k, k}, rng, std::sqrt(2.0 / fan_in)));
  if (with_bias) bias = store.add_parameter(name + ".bias", Tensor::zeros({cout}));
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, dilation);
}

BatchNormLayer::BatchNormLayer(ParameterStore& store, const std::string& name, int channels) {
  const auto c = static_cast<std::size_t>(channels);
  gamma = store.add_parameter(name + ".gamma", Tensor::full({c}, 1.0));
  beta = store.add_parameter(name + ".beta", Tensor::zeros({c}));
  buffers = store.add_buffers(name, c);
}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) const {
  return batch_norm(x, gamma, beta, *buffers, mode);
}

ConvBnAct::ConvBnAct(ParameterStore& store, const std::string& name, int in_channels,
                     int out_channels, int kernel, int stride, int dilation, bool activate_,
                     Rng& rng)
    : conv(store, name + ".conv", in_channels, out_channels, kernel, stride, dilation, rng, false),
      norm(store, name + ".bn", out_channels),
      activate(activate_) {}

Tensor ConvBnAct::forward(const Tensor& x, Mode mode) const {
  Tensor y = norm.forward(conv.forward(x), mode);
  return activate ? relu(y) : y;
}

void check_halving_chain(const std::vector<Tensor>& levels, const char* what) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].rank() != 4) {
      throw ShapeError(std::string(what) + ": level " + std::to_string(i) + " has shape " +
                       dims(levels[i]) + ", expected rank 4");
    }
    if (i == 0) continue;
    const Tensor& hi = levels[i - 1];
    const Tensor& lo = levels[i];
    if (hi.dim(0) != lo.dim(0) || hi.dim(2) != 2 * lo.dim(2) || hi.dim(3) != 2 * lo.dim(3)) {
      throw ShapeError(std::string(what) + ": level " + std::to_string(i - 1) + " " + dims(hi) +
                       " is not twice level " + std::to_string(i) + " " + dims(lo));
    }
  }
}

FeaturePyramid::FeaturePyramid(std::vector<Tensor> levels) : levels_(std::move(levels)) {
  if (levels_.empty()) throw ShapeError("feature pyramid needs at least one level");
  check_halving_chain(levels_, "feature pyramid");
}

ParallelStageState::ParallelStageState(std::vector<Tensor> branches,
                                       const ParallelStageState* previous)
    : branches_(std::move(branches)) {
  if (branches_.empty()) throw ShapeError("parallel stage needs at least one branch");
  check_halving_chain(branches_, "parallel stage");
  if (previous == nullptr) return;
  if (previous->branches_.size() != branches_.size()) {
    throw ShapeError("parallel stage changed its branch count");
  }
  for (std::size_t r = 0; r < branches_.size(); ++r) {
    const Tensor& a = previous->branches_[r];
    const Tensor& b = branches_[r];
    if (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
      throw ShapeError("parallel stage branch " + std::to_string(r) + " changed resolution from " +
                       dims(a) + " to " + dims(b));
    }
  }
}

Backbone::Backbone(ParameterStore& store, const NetworkConfig& config, Rng& rng)
    : total_stride_(config.total_stride()) {
  const int w0 = config.backbone_widths.front();
  int in = config.input_channels;
  for (int s = 1, i = 0; s < config.heatmap_stride; s *= 2, ++i) {
    stem_.emplace_back(store, "backbone.stem" + std::to_string(i), in, w0, 3, 2, 1, true, rng);
    in = w0;
  }
  for (std::size_t i = 0; i < config.backbone_widths.size(); ++i) {
    const int w = config.backbone_widths[i];
    const std::string name = "backbone.stage" + std::to_string(i);
    Stage stage{ConvBnAct(store, name + ".entry", in, w, 3, i == 0 ? 1 : 2, 1, true, rng),
                ConvBnAct(store, name + ".body", w, w, 3, 1, 1, false, rng)};
    stages_.push_back(std::move(stage));
    in = w;
  }
}

std::vector<Tensor> Backbone::forward(const Tensor& images, Mode mode) const {
  if (images.rank() != 4) throw ShapeError("backbone input must be [B, C, H, W]");
  const auto stride = static_cast<std::size_t>(total_stride_);
  if (images.dim(2) % stride != 0 || images.dim(3) % stride != 0) {
    const std::size_t ph = (images.dim(2) + stride - 1) / stride * stride;
    const std::size_t pw = (images.dim(3) + stride - 1) / stride * stride;
    throw ContractError("backbone input " + dims(images) + " must be divisible by " +
                        std::to_string(stride) + "; pad to " + std::to_string(ph) + "x" +
                        std::to_string(pw));
  }
  Tensor x = images;
  for (const ConvBnAct& layer : stem_) x = layer.forward(x, mode);
  std::vector<Tensor> outputs;
  for (const Stage& stage : stages_) {
    Tensor entry = stage.entry.forward(x, mode);
    x = relu(add(entry, stage.body.forward(entry, mode)));
    outputs.push_back(x);
  }
  return outputs;
}

PyramidTopDown::PyramidTopDown(ParameterStore& store, const std::string& name,
                               const std::vector<int>& widths, int out_width, Rng& rng) {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    laterals_.emplace_back(store, name + ".lateral" + std::to_string(i), widths[i], out_width, 1,
                           1, 1, rng);
  }
}

FeaturePyramid PyramidTopDown::forward(const std::vector<Tensor>& features) const {
  if (features.size() != laterals_.size()) {
    throw ContractError("pyramid expects " + std::to_string(laterals_.size()) + " levels, got " +
                        std::to_string(features.size()));
  }
  check_halving_chain(features, "pyramid input");
  std::vector<Tensor> levels(features.size());
  for (std::size_t i = features.size(); i-- > 0;) {
    Tensor lateral = laterals_[i].forward(features[i]);
    levels[i] = i + 1 == features.size() ? lateral
                                         : add(lateral, nearest_upsample(levels[i + 1], 2));
  }
  return FeaturePyramid(std::move(levels));
}

ExchangeUnit::ExchangeUnit(ParameterStore& store, const std::string& name, int branches, int width,
                           Rng& rng)
    : branches_(branches) {
  const auto n = static_cast<std::size_t>(branches);
  down_.resize(n);
  up_.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    down_[t].resize(n);
    up_[t].resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      const std::string tag = name + ".to" + std::to_string(t) + "_from" + std::to_string(s);
      if (s < t) {
        for (std::size_t k = 0; k < t - s; ++k) {
          down_[t][s].emplace_back(store, tag + ".down" + std::to_string(k), width, width, 3, 2, 1,
                                   rng);
        }
      } else if (s > t) {
        up_[t][s] = Conv2dLayer(store, tag + ".up", width, width, 1, 1, 1, rng);
      }
    }
  }
}

std::vector<Tensor> ExchangeUnit::forward(const std::vector<Tensor>& branches) const {
  if (static_cast<int>(branches.size()) != branches_) {
    throw ContractError("exchange unit expects " + std::to_string(branches_) + " branches, got " +
                        std::to_string(branches.size()));
  }
  check_halving_chain(branches, "exchange unit");
  if (branches.size() == 1) return branches;
  std::vector<Tensor> outputs;
  for (std::size_t t = 0; t < branches.size(); ++t) {
    Tensor fused;
    for (std::size_t s = 0; s < branches.size(); ++s) {
      Tensor term;
      if (s == t) {
        term = branches[s];
      } else if (s < t) {
        term = branches[s];
        for (const Conv2dLayer& conv : down_[t][s]) term = conv.forward(term);
      } else {
        term = nearest_upsample(up_[t][s].forward(branches[s]), 1 << (s - t));
      }
      fused = fused.defined() ? add(fused, term) : term;
    }
    outputs.push_back(fused);
  }
  return outputs;
}

std::vector<Tensor> ExchangeUnit::transform_parameters() const {
  std::vector<Tensor> params;
  for (std::size_t t = 0; t < down_.size(); ++t) {
    for (std::size_t s = 0; s < down_[t].size(); ++s) {
      for (const Conv2dLayer& conv : down_[t][s]) {
        params.push_back(conv.weight);
        params.push_back(conv.bias);
      }
      if (up_[t][s].weight.defined()) {
        params.push_back(up_[t][s].weight);
        params.push_back(up_[t][s].bias);
      }
    }
  }
  return params;
}

Apm::Apm(ParameterStore& store, const std::string& name, int channels, Rng& rng)
    : phi(store, name + ".phi", channels, channels, 1, 1, 1, rng) {}

Tensor Apm::channel_weights(const Tensor& features) const {
  return sigmoid(phi.forward(global_avg_pool(features)));
}

Tensor Apm::forward(const Tensor& features) const {
  return channel_scale(features, channel_weights(features));
}

DilatedBottleneck::DilatedBottleneck(ParameterStore& store, const std::string& name, int width,
                                     int dilation, Rng& rng)
    : reduce(store, name + ".reduce", width, width / 2, 1, 1, 1, true, rng),
      dilated(store, name + ".dilated", width / 2, width / 2, 3, 1, dilation, true, rng),
      expand(store, name + ".expand", width / 2, width, 1, 1, 1, false, rng) {}

Tensor DilatedBottleneck::forward(const Tensor& x, Mode mode) const {
  return add(x, expand.forward(dilated.forward(reduce.forward(x, mode), mode), mode));
}

std::vector<Tensor> DilatedBottleneck::branch_parameters() const {
  std::vector<Tensor> params;
  for (const ConvBnAct* layer : {&reduce, &dilated, &expand}) {
    params.push_back(layer->conv.weight);
    params.push_back(layer->norm.gamma);
    params.push_back(layer->norm.beta);
  }
  return params;
}

P2Net::P2Net(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int levels = config_.levels();
  const int width = config_.pyramid_width;
  backbone_ = Backbone(store_, config_, rng);
  pyramid_ = PyramidTopDown(store_, "pyramid", config_.backbone_widths, width, rng);
  for (int s = 0; s < config_.parallel_stages; ++s) {
    ParallelStage stage;
    const std::string name = "parallel" + std::to_string(s);
    for (int r = 0; r < levels; ++r) {
      stage.convs.emplace_back(store_, name + ".branch" + std::to_string(r), width, width, 3, 1, 1,
                               true, rng);
    }
    stage.exchange = ExchangeUnit(store_, name + ".exchange", levels, width, rng);
    stages_.push_back(std::move(stage));
  }
  parallel_head_ = Conv2dLayer(store_, "parallel_head", width, config_.keypoints, 3, 1, 1, rng);
  for (int r = 0; r < levels; ++r) {
    std::vector<DilatedBottleneck> blocks;
    for (int b = 0; b <= r; ++b) {
      blocks.emplace_back(store_, "refine.level" + std::to_string(r) + ".block" + std::to_string(b),
                          width, config_.dilation, rng);
    }
    refine_blocks_.push_back(std::move(blocks));
    if (config_.apm_per_branch) {
      branch_apms_.emplace_back(store_, "refine.level" + std::to_string(r) + ".apm", width, rng);
    }
  }
  apm_ = Apm(store_, "refine.apm", width * levels, rng);
  refine_head_ = Conv2dLayer(store_, "refine_head", width * levels, config_.keypoints, 3, 1, 1, rng);
}

P2NetOutput P2Net::forward(const Tensor& images, Mode mode) const {
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(config_.input_channels)) {
    throw ShapeError("network input " + dims(images) + " does not match configured channels");
  }
  const FeaturePyramid pyramid = pyramid_.forward(backbone_.forward(images, mode));
  ParallelStageState state(pyramid.levels());
  for (const ParallelStage& stage : stages_) {
    std::vector<Tensor> branches;
    for (std::size_t r = 0; r < stage.convs.size(); ++r) {
      branches.push_back(stage.convs[r].forward(state.branches()[r], mode));
    }
    ParallelStageState next(stage.exchange.forward(branches), &state);
    state = std::move(next);
  }
  P2NetOutput out;
  out.parallel = parallel_head_.forward(state.branches().front());

  std::vector<Tensor> refined;
  for (std::size_t r = 0; r < refine_blocks_.size(); ++r) {
    Tensor x = state.branches()[r];
    for (const DilatedBottleneck& block : refine_blocks_[r]) x = block.forward(x, mode);
    if (!branch_apms_.empty()) x = branch_apms_[r].forward(x);
    refined.push_back(r == 0 ? x : nearest_upsample(x, 1 << r));
  }
  out.refined = refine_head_.forward(apm_.forward(concat_channels(refined)));
  return out;
}

Tensor images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ContractError("images_to_tensor: empty batch");
  const Image& first = *images.front();
  const auto c = static_cast<std::size_t>(first.channels);
  const auto h = static_cast<std::size_t>(first.height);
  const auto w = static_cast<std::size_t>(first.width);
  std::vector<double> data(images.size() * c * h * w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.width != first.width || img.height != first.height || img.channels != first.channels) {
      throw ShapeError("images_to_tensor: batch images differ in extents");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          data[((b * c + ch) * h + y) * w + x] =
              (img.pixels[(y * w + x) * c + ch] - 127.5) / 63.75;
        }
      }
    }
  }
  return Tensor::from_data({images.size(), c, h, w}, std::move(data));
}

}  // namespace p2net
