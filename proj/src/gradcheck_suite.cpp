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

#include "p2net/gradcheck_suite.hpp"

#include <chrono>

#include "p2net/losses.hpp"
#include "p2net/network.hpp"
#include "p2net/ops.hpp"
#include "p2net/search.hpp"

namespace p2net {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

Tensor leaf(Shape shape, Rng& rng, double scale = 1.0) {
  return random_normal(std::move(shape), rng, scale, true);
}

// Checks sum(w * f()) for a random projection w.
GradcheckOutcome check_projected(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                 Rng& rng, std::size_t coords = 24) {
  Tensor w;
  {
    NoGradGuard no_grad;
    w = random_normal(f().shape(), rng);
  }
  GradcheckOptions options;
  options.max_coordinates_per_input = coords;
  return check_gradients([&] { return project_to_scalar(f(), w); }, std::move(inputs), rng,
                         options);
}

GradcheckOutcome check_scalar(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                              Rng& rng, std::size_t coords = 24) {
  GradcheckOptions options;
  options.max_coordinates_per_input = coords;
  return check_gradients(f, std::move(inputs), rng, options);
}

std::vector<Tensor> subset(const std::vector<Tensor>& all, std::size_t count, Rng& rng) {
  std::vector<Tensor> out;
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < std::min(count, idx.size()); ++i) out.push_back(all[idx[i]]);
  return out;
}

// Batch-norm weights drawn away from their identity initialisation so the
// composites are not checked at a special point.
void jitter(ParameterStore& store, Rng& rng) {
  for (Tensor& p : store.parameters()) {
    for (double& v : p.mutable_data()) v += normal(rng, 0.0, 0.1);
  }
}

std::vector<GradcheckFamily> build_registry() {
  std::vector<GradcheckFamily> r;
  r.push_back({"conv2d", [](Rng& rng) {
                 const std::size_t b = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                 const std::size_t h = pick(rng, 3, 7), w = pick(rng, 3, 7);
                 const std::size_t k = uniform_index(rng, 2) == 0 ? 1 : 3;
                 const int stride = static_cast<int>(pick(rng, 1, 2));
                 const int dilation = static_cast<int>(pick(rng, 1, 2));
                 Tensor x = leaf({b, cin, h, w}, rng), wt = leaf({cout, cin, k, k}, rng),
                        bias = leaf({cout}, rng);
                 return check_projected([=] { return conv2d(x, wt, bias, stride, dilation); },
                                        {x, wt, bias}, rng);
               }});
  r.push_back({"nearest_upsample", [](Rng& rng) {
                 const int factor = uniform_index(rng, 2) == 0 ? 2 : 4;
                 Tensor x = leaf({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
                 return check_projected([=] { return nearest_upsample(x, factor); }, {x}, rng);
               }});
  r.push_back({"global_avg_pool", [](Rng& rng) {
                 Tensor x = leaf({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
                 return check_projected([=] { return global_avg_pool(x); }, {x}, rng);
               }});
  r.push_back({"channel_scale", [](Rng& rng) {
                 const std::size_t b = pick(rng, 1, 2), c = pick(rng, 1, 4);
                 Tensor f = leaf({b, c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng), v = leaf({b, c, 1, 1}, rng);
                 return check_projected([=] { return channel_scale(f, v); }, {f, v}, rng);
               }});
  r.push_back({"sigmoid", [](Rng& rng) {
                 Tensor x = leaf({pick(rng, 1, 12)}, rng, 2.0);
                 return check_projected([=] { return sigmoid(x); }, {x}, rng);
               }});
  r.push_back({"relu", [](Rng& rng) {
                 Tensor x = leaf({pick(rng, 1, 16)}, rng);
                 return check_projected([=] { return relu(x); }, {x}, rng);
               }});
  r.push_back({"elementwise", [](Rng& rng) {
                 const Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
                 Tensor a = leaf(s, rng), b = leaf(s, rng), c = leaf(s, rng), k = leaf({1}, rng);
                 return check_projected(
                     [=] {
                       return add_scalar(
                           scalar_mul(mul(k, square(mul(add(a, b), sub(a, c)))), 0.7), 0.3);
                     },
                     {a, b, c, k}, rng);
               }});
  r.push_back({"reductions", [](Rng& rng) {
                 const std::size_t rows = pick(rng, 1, 4), cols = pick(rng, 1, 4);
                 Tensor m = leaf({rows, cols}, rng);
                 const std::size_t row = uniform_index(rng, rows);
                 return check_scalar(
                     [=] {
                       const Tensor picked = select_row(reshape(m, {rows, cols}), row);
                       const Tensor stacked = stack_scalars({sum(square(picked)), mean(m)});
                       return sum(mul(stacked, stacked));
                     },
                     {m}, rng);
               }});
  r.push_back({"concat_channels", [](Rng& rng) {
                 const std::size_t b = pick(rng, 1, 2), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
                 Tensor x = leaf({b, pick(rng, 1, 3), h, w}, rng), y = leaf({b, pick(rng, 1, 3), h, w}, rng);
                 return check_projected([=] { return concat_channels({x, y, x}); }, {x, y}, rng);
               }});
  r.push_back({"softmax", [](Rng& rng) {
                 Tensor x = leaf({pick(rng, 1, 3), pick(rng, 2, 6)}, rng, 2.0);
                 return check_projected([=] { return softmax(x); }, {x}, rng);
               }});
  r.push_back({"batch_norm", [](Rng& rng) {
                 const std::size_t c = pick(rng, 1, 3);
                 Tensor x = leaf({pick(rng, 2, 3), c, pick(rng, 1, 3), pick(rng, 1, 3)}, rng);
                 Tensor g = leaf({c}, rng), be = leaf({c}, rng);
                 auto buffers = std::make_shared<BatchNormBuffers>(c);
                 const bool train = uniform_index(rng, 4) != 0;
                 if (!train) {
                   buffers->trained = true;
                   for (double& v : buffers->running_var) v = uniform(rng, 0.5, 2.0);
                   for (double& v : buffers->running_mean) v = normal(rng);
                 }
                 const BatchNormMode mode = train ? BatchNormMode::kTrain : BatchNormMode::kEval;
                 return check_projected([=] { return batch_norm(x, g, be, *buffers, mode); },
                                        {x, g, be}, rng);
               }});
  r.push_back({"l2_loss", [](Rng& rng) {
                 const std::size_t b = pick(rng, 1, 3), k = pick(rng, 1, 4);
                 Tensor p = leaf({b, k, pick(rng, 2, 4), pick(rng, 2, 4)}, rng);
                 Tensor t = random_uniform(p.shape(), rng, 0.0, 1.0);
                 std::vector<double> m(b * k);
                 for (double& v : m) v = uniform_index(rng, 4) == 0 ? 0.0 : 1.0;
                 m[0] = 1.0;
                 Tensor mask = Tensor::from_data({b, k}, m);
                 return check_scalar([=] { return l2_loss(p, t, mask); }, {p}, rng);
               }});
  r.push_back({"ohkm_loss", [](Rng& rng) {
                 const std::size_t b = pick(rng, 1, 3), k = pick(rng, 2, 5);
                 Tensor p = leaf({b, k, pick(rng, 2, 4), pick(rng, 2, 4)}, rng);
                 Tensor t = random_uniform(p.shape(), rng, 0.0, 1.0);
                 Tensor mask = Tensor::full({b, k}, 1.0);
                 const int alpha_k = static_cast<int>(pick(rng, 1, k));
                 return check_scalar([=] { return ohkm_loss(p, t, mask, alpha_k); }, {p}, rng);
               }});
  r.push_back({"relaxed_loss", [](Rng& rng) {
                 const std::size_t m = pick(rng, 1, 6);
                 Tensor row = leaf({m}, rng), q = leaf({1}, rng), id = leaf({}, rng);
                 std::vector<Tensor> losses;
                 for (std::size_t i = 0; i < m; ++i) losses.push_back(leaf({}, rng));
                 std::vector<Tensor> inputs{row, q, id};
                 inputs.insert(inputs.end(), losses.begin(), losses.end());
                 return check_scalar([=] { return relaxed_loss(row, q, losses, id); }, inputs, rng);
               }});
  r.push_back({"apm", [](Rng& rng) {
                 ParameterStore store;
                 const int c = static_cast<int>(pick(rng, 1, 4));
                 Apm apm(store, "apm", c, rng);
                 jitter(store, rng);
                 Tensor f = leaf({pick(rng, 1, 2), static_cast<std::size_t>(c), pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
                 std::vector<Tensor> inputs = store.parameters();
                 inputs.push_back(f);
                 return check_projected([=] { return apm.forward(f); }, inputs, rng);
               }});
  r.push_back({"dilated_bottleneck", [](Rng& rng) {
                 ParameterStore store;
                 const int width = 2 * static_cast<int>(pick(rng, 1, 2));
                 const int d = static_cast<int>(pick(rng, 1, 2));
                 DilatedBottleneck block(store, "db", width, d, rng);
                 jitter(store, rng);
                 Tensor x = leaf({2, static_cast<std::size_t>(width), pick(rng, 3, 5), pick(rng, 3, 5)}, rng);
                 std::vector<Tensor> inputs = subset(store.parameters(), 4, rng);
                 inputs.push_back(x);
                 return check_projected([=] { return block.forward(x, Mode::kTrain); }, inputs, rng, 12);
               }});
  r.push_back({"exchange_unit", [](Rng& rng) {
                 ParameterStore store;
                 const int branches = static_cast<int>(pick(rng, 2, 3));
                 const int width = static_cast<int>(pick(rng, 1, 3));
                 ExchangeUnit unit(store, "ex", branches, width, rng);
                 jitter(store, rng);
                 std::vector<Tensor> levels;
                 std::size_t extent = 8;
                 for (int b = 0; b < branches; ++b, extent /= 2) {
                   levels.push_back(leaf({1, static_cast<std::size_t>(width), extent, extent}, rng));
                 }
                 std::vector<Tensor> inputs = subset(store.parameters(), 4, rng);
                 inputs.insert(inputs.end(), levels.begin(), levels.end());
                 std::vector<Tensor> weights;
                 for (const Tensor& l : levels) weights.push_back(random_normal(l.shape(), rng));
                 return check_scalar(
                     [=] {
                       const auto out = unit.forward(levels);
                       std::vector<Tensor> parts;
                       for (std::size_t i = 0; i < out.size(); ++i) {
                         parts.push_back(project_to_scalar(out[i], weights[i]));
                       }
                       return sum(stack_scalars(parts));
                     },
                     inputs, rng, 12);
               }});
  r.push_back({"pyramid_topdown", [](Rng& rng) {
                 ParameterStore store;
                 const std::vector<int> widths{static_cast<int>(pick(rng, 1, 3)), static_cast<int>(pick(rng, 1, 3))};
                 const int out = static_cast<int>(pick(rng, 1, 3));
                 PyramidTopDown pyramid(store, "py", widths, out, rng);
                 Tensor c0 = leaf({1, static_cast<std::size_t>(widths[0]), 8, 8}, rng);
                 Tensor c1 = leaf({1, static_cast<std::size_t>(widths[1]), 4, 4}, rng);
                 std::vector<Tensor> inputs = store.parameters();
                 inputs.push_back(c0);
                 inputs.push_back(c1);
                 return check_projected([=] { return pyramid.forward({c0, c1})[0]; }, inputs, rng, 12);
               }});
  r.push_back({"p2net", [](Rng& rng) {
                 NetworkConfig cfg;
                 cfg.input_height = cfg.input_width = 32;
                 cfg.input_channels = 1;
                 cfg.backbone_widths = {4, 8};
                 cfg.pyramid_width = 4;
                 cfg.parallel_stages = 1;
                 cfg.keypoints = 2;
                 auto net = std::make_shared<P2Net>(cfg, rng());
                 jitter(net->store(), rng);
                 Tensor x = leaf({1, 1, 32, 32}, rng);
                 std::vector<Tensor> inputs = subset(net->store().parameters(), 5, rng);
                 inputs.push_back(x);
                 return check_projected(
                     [=] {
                       const P2NetOutput out = net->forward(x, Mode::kTrain);
                       return concat_channels({out.parallel, out.refined});
                     },
                     inputs, rng, 8);
               }});
  return r;
}

}  // namespace

const std::vector<GradcheckFamily>& gradcheck_registry() {
  static const std::vector<GradcheckFamily> registry = build_registry();
  return registry;
}

FamilyReport run_family(const GradcheckFamily& family, std::size_t instances, std::uint64_t seed,
                        double tolerance) {
  FamilyReport report;
  report.name = family.name;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, {hash_label(family.name), i}));
    const GradcheckOutcome o = family.run_instance(rng);
    ++report.instances;
    report.max_error = std::max(report.max_error, o.relative_error);
    report.coordinates += o.coordinates;
    report.kinks_skipped += o.kinks_skipped;
    if (!(o.relative_error < tolerance) || o.coordinates == 0) ++report.failures;
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<FamilyReport> run_gradcheck_suite(std::size_t instances, std::uint64_t seed,
                                              double tolerance) {
  std::vector<FamilyReport> reports;
  for (const GradcheckFamily& f : gradcheck_registry()) {
    reports.push_back(run_family(f, instances, seed, tolerance));
  }
  return reports;
}

}  // namespace p2net
