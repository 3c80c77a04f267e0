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

#include "p2net/ops.hpp"

#include <Eigen/Core>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "p2net/errors.hpp"

namespace p2net {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  int stride, dilation;
  std::size_t pad_h, pad_w, out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1; }
};

void im2col(const ConvGeometry& g, const double* image, double* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * pixels;
        const long dy = static_cast<long>(ky) * g.dilation - static_cast<long>(g.pad_h);
        const long dx = static_cast<long>(kx) * g.dilation - static_cast<long>(g.pad_w);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride + dy;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride + dx;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* image) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * pixels;
        const long dy = static_cast<long>(ky) * g.dilation - static_cast<long>(g.pad_h);
        const long dx = static_cast<long>(kx) * g.dilation - static_cast<long>(g.pad_w);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride + dy;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          const double* src = row + oy * g.out_w;
          double* dst = plane + iy * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride + dx;
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor unary(const char* name, const Tensor& x, double (*f)(double),
             std::vector<double> (*df)(std::span<const double> in, std::span<const double> out)) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  std::transform(in.begin(), in.end(), out.begin(), f);
  TensorStorage* xs = x.storage().get();
  std::vector<double> out_copy = out;
  return make_op_result(name, x.shape(), std::move(out), {x},
                        [xs, df, out_copy = std::move(out_copy)](std::span<const double> gout) {
                          std::vector<double> local = df(xs->data, out_copy);
                          auto w = work_buffer(xs);
                          for (std::size_t i = 0; i < local.size(); ++i) w[i] += local[i] * gout[i];
                        });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride,
              int dilation) {
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = weights.dim(0);
  g.kernel_h = weights.dim(2);
  g.kernel_w = weights.dim(3);
  g.stride = stride;
  g.dilation = dilation;
  if (weights.dim(1) != g.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in_channels) +
                     " channels but weights expect " + std::to_string(weights.dim(1)));
  }
  auto odd_small = [](std::size_t k) { return k == 1 || k == 3; };
  if (!odd_small(g.kernel_h) || !odd_small(g.kernel_w)) {
    throw ContractError("conv2d: kernel extents must be 1 or 3");
  }
  if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
  if (dilation < 1) throw ContractError("conv2d: dilation must be >= 1");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias shape " + shape_to_string(bias.shape()) +
                     " does not match output channels");
  }
  g.pad_h = static_cast<std::size_t>(dilation) * (g.kernel_h - 1) / 2;
  g.pad_w = static_cast<std::size_t>(dilation) * (g.kernel_w - 1) / 2;
  g.out_h = (g.height + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
  g.out_w = (g.width + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);

  const std::size_t in_plane = g.in_channels * g.height * g.width;
  const std::size_t out_plane = g.out_channels * g.pixels();
  std::vector<double> out(g.batch * out_plane);
  // GEMM operands live in Eigen-owned (aligned) storage so that the
  // vectorized kernels sum in the same order regardless of where the
  // tensor buffers happen to be allocated.
  const RowMatrix w = ConstMatrixMap(weights.data().data(), g.out_channels, g.patch());
  RowMatrix cols(g.patch(), g.pixels());
  RowMatrix o(g.out_channels, g.pixels());
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* image = input.data().data() + b * in_plane;
    if (g.is_pointwise()) {
      cols = ConstMatrixMap(image, g.patch(), g.pixels());
    } else {
      im2col(g, image, cols.data());
    }
    o.noalias() = w * cols;
    double* dst = out.data() + b * out_plane;
    std::copy(o.data(), o.data() + out_plane, dst);
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        for (std::size_t i = 0; i < g.pixels(); ++i) dst[c * g.pixels() + i] += bv[c];
      }
    }
  }

  TensorStorage* xs = input.storage().get();
  TensorStorage* ws = weights.storage().get();
  TensorStorage* bs = bias.defined() ? bias.storage().get() : nullptr;
  std::vector<Tensor> inputs{input, weights};
  if (bias.defined()) inputs.push_back(bias);
  Shape out_shape{g.batch, g.out_channels, g.out_h, g.out_w};
  return make_op_result(
      "conv2d", std::move(out_shape), std::move(out), inputs,
      [g, xs, ws, bs, in_plane, out_plane](std::span<const double> gout) {
        const RowMatrix w = ConstMatrixMap(ws->data.data(), g.out_channels, g.patch());
        RowMatrix cols(g.patch(), g.pixels());
        RowMatrix dout(g.out_channels, g.pixels());
        RowMatrix dcol(g.patch(), g.pixels());
        RowMatrix dw = RowMatrix::Zero(g.out_channels, g.patch());
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* go = gout.data() + b * out_plane;
          std::copy(go, go + out_plane, dout.data());
          if (ws->requires_grad) {
            const double* image = xs->data.data() + b * in_plane;
            if (g.is_pointwise()) {
              cols = ConstMatrixMap(image, g.patch(), g.pixels());
            } else {
              im2col(g, image, cols.data());
            }
            dw.noalias() += dout * cols.transpose();
          }
          if (bs != nullptr && bs->requires_grad) {
            auto db = work_buffer(bs);
            for (std::size_t c = 0; c < g.out_channels; ++c) {
              double acc = 0.0;
              for (std::size_t i = 0; i < g.pixels(); ++i) acc += go[c * g.pixels() + i];
              db[c] += acc;
            }
          }
          if (xs->requires_grad) {
            double* dx = work_buffer(xs).data() + b * in_plane;
            dcol.noalias() = w.transpose() * dout;
            if (g.is_pointwise()) {
              for (std::size_t i = 0; i < in_plane; ++i) dx[i] += dcol.data()[i];
            } else {
              col2im_add(g, dcol.data(), dx);
            }
          }
        }
        if (ws->requires_grad) {
          auto dst = work_buffer(ws);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += dw.data()[i];
        }
      });
}

Tensor nearest_upsample(const Tensor& input, int factor) {
  require_rank(input, 4, "nearest_upsample");
  if (factor < 1) throw ContractError("nearest_upsample: factor must be >= 1");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * f, ow = w * f;
  std::vector<double> out(planes * oh * ow);
  const double* in = input.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      const double* src = in + p * h * w + (y / f) * w;
      double* dst = out.data() + p * oh * ow + y * ow;
      for (std::size_t x = 0; x < ow; ++x) dst[x] = src[x / f];
    }
  }
  TensorStorage* xs = input.storage().get();
  return make_op_result("nearest_upsample", {input.dim(0), input.dim(1), oh, ow}, std::move(out),
                        {input}, [xs, planes, h, w, f, oh, ow](std::span<const double> gout) {
                          auto dx = work_buffer(xs);
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t y = 0; y < oh; ++y) {
                              const double* src = gout.data() + p * oh * ow + y * ow;
                              double* dst = dx.data() + p * h * w + (y / f) * w;
                              for (std::size_t x = 0; x < ow; ++x) dst[x / f] += src[x];
                            }
                          }
                        });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t area = input.dim(2) * input.dim(3);
  if (area == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  std::vector<double> out(planes);
  const double* in = input.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    out[p] = acc / static_cast<double>(area);
  }
  TensorStorage* xs = input.storage().get();
  return make_op_result("global_avg_pool", {input.dim(0), input.dim(1), 1, 1}, std::move(out),
                        {input}, [xs, planes, area](std::span<const double> gout) {
                          auto dx = work_buffer(xs);
                          const double inv = 1.0 / static_cast<double>(area);
                          for (std::size_t p = 0; p < planes; ++p) {
                            const double g = gout[p] * inv;
                            for (std::size_t i = 0; i < area; ++i) dx[p * area + i] += g;
                          }
                        });
}

Tensor channel_scale(const Tensor& features, const Tensor& scales) {
  require_rank(features, 4, "channel_scale features");
  require_rank(scales, 4, "channel_scale scales");
  if (scales.dim(0) != features.dim(0) || scales.dim(1) != features.dim(1) ||
      scales.dim(2) != 1 || scales.dim(3) != 1) {
    throw ShapeError("channel_scale: scales " + shape_to_string(scales.shape()) +
                     " incompatible with features " + shape_to_string(features.shape()));
  }
  const std::size_t planes = features.dim(0) * features.dim(1);
  const std::size_t area = features.dim(2) * features.dim(3);
  std::vector<double> out(features.numel());
  const double* f = features.data().data();
  const double* v = scales.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < area; ++i) out[p * area + i] = f[p * area + i] * v[p];
  }
  TensorStorage* fs = features.storage().get();
  TensorStorage* vs = scales.storage().get();
  return make_op_result("channel_scale", features.shape(), std::move(out), {features, scales},
                        [fs, vs, planes, area](std::span<const double> gout) {
                          if (fs->requires_grad) {
                            auto df = work_buffer(fs);
                            for (std::size_t p = 0; p < planes; ++p) {
                              for (std::size_t i = 0; i < area; ++i) {
                                df[p * area + i] += gout[p * area + i] * vs->data[p];
                              }
                            }
                          }
                          if (vs->requires_grad) {
                            auto dv = work_buffer(vs);
                            for (std::size_t p = 0; p < planes; ++p) {
                              double acc = 0.0;
                              for (std::size_t i = 0; i < area; ++i) {
                                acc += gout[p * area + i] * fs->data[p * area + i];
                              }
                              dv[p] += acc;
                            }
                          }
                        });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](std::span<const double>, std::span<const double> out) {
        std::vector<double> d(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) d[i] = out[i] * (1.0 - out[i]);
        return d;
      });
}

Tensor relu(const Tensor& x) {
  if (KinkMonitor* monitor = KinkMonitor::active()) {
    auto in = x.data();
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      bits = (bits << 1) | (in[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63) {
        monitor->mix(bits);
        bits = 0;
      }
    }
    monitor->mix(bits);
  }
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](std::span<const double> in, std::span<const double>) {
        std::vector<double> d(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) d[i] = in[i] > 0.0 ? 1.0 : 0.0;
        return d;
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  TensorStorage* as = a.storage().get();
  TensorStorage* bs = b.storage().get();
  return make_op_result("add", a.shape(), std::move(out), {a, b},
                        [as, bs](std::span<const double> gout) {
                          add_to_work(as, gout);
                          add_to_work(bs, gout);
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  TensorStorage* as = a.storage().get();
  TensorStorage* bs = b.storage().get();
  return make_op_result("sub", a.shape(), std::move(out), {a, b},
                        [as, bs](std::span<const double> gout) {
                          add_to_work(as, gout);
                          if (bs->requires_grad) {
                            auto db = work_buffer(bs);
                            for (std::size_t i = 0; i < gout.size(); ++i) db[i] -= gout[i];
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  // A single-element operand broadcasts; with two, the result takes a's shape.
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && (a.numel() != 1 || a.shape() != b.shape());
  if (!a_scalar && !b_scalar) require_same_shape(a, b, "mul");
  const Tensor& big = a_scalar ? b : a;
  std::vector<double> out(big.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ad[a_scalar ? 0 : i] * bd[b_scalar ? 0 : i];
  }
  TensorStorage* as = a.storage().get();
  TensorStorage* bs = b.storage().get();
  return make_op_result("mul", big.shape(), std::move(out), {a, b},
                        [as, bs, a_scalar, b_scalar](std::span<const double> gout) {
                          if (as->requires_grad) {
                            auto da = work_buffer(as);
                            for (std::size_t i = 0; i < gout.size(); ++i) {
                              da[a_scalar ? 0 : i] += gout[i] * bs->data[b_scalar ? 0 : i];
                            }
                          }
                          if (bs->requires_grad) {
                            auto db = work_buffer(bs);
                            for (std::size_t i = 0; i < gout.size(); ++i) {
                              db[b_scalar ? 0 : i] += gout[i] * as->data[a_scalar ? 0 : i];
                            }
                          }
                        });
}

Tensor scalar_mul(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
  TensorStorage* xs = x.storage().get();
  return make_op_result("scalar_mul", x.shape(), std::move(out), {x},
                        [xs, factor](std::span<const double> gout) {
                          auto dx = work_buffer(xs);
                          for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i] * factor;
                        });
}

Tensor add_scalar(const Tensor& x, double offset) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] + offset;
  TensorStorage* xs = x.storage().get();
  return make_op_result("add_scalar", x.shape(), std::move(out), {x},
                        [xs](std::span<const double> gout) { add_to_work(xs, gout); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; },
      [](std::span<const double> in, std::span<const double>) {
        std::vector<double> d(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) d[i] = 2.0 * in[i];
        return d;
      });
}

Tensor sum(const Tensor& x) {
  auto in = x.data();
  const double total = std::accumulate(in.begin(), in.end(), 0.0);
  TensorStorage* xs = x.storage().get();
  return make_op_result("sum", Shape{}, {total}, {x}, [xs](std::span<const double> gout) {
    auto dx = work_buffer(xs);
    for (double& v : dx) v += gout[0];
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  auto in = x.data();
  const double avg = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(n);
  TensorStorage* xs = x.storage().get();
  return make_op_result("mean", Shape{}, {avg}, {x}, [xs, n](std::span<const double> gout) {
    auto dx = work_buffer(xs);
    const double g = gout[0] / static_cast<double>(n);
    for (double& v : dx) v += g;
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw ShapeError("concat_channels: rank must be >= 2");
  std::size_t channels = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool compatible = s.size() == first.size() && s[0] == first[0];
    for (std::size_t axis = 2; compatible && axis < s.size(); ++axis) {
      compatible = s[axis] == first[axis];
    }
    if (!compatible) {
      throw ShapeError("concat_channels: " + shape_to_string(s) + " incompatible with " +
                       shape_to_string(first));
    }
    channels += s[1];
  }
  const std::size_t batch = first[0];
  std::size_t inner = 1;
  for (std::size_t axis = 2; axis < first.size(); ++axis) inner *= first[axis];
  Shape out_shape = first;
  out_shape[1] = channels;
  std::vector<double> out(batch * channels * inner);
  std::vector<TensorStorage*> storages;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    const std::size_t c = t.dim(1);
    const double* src = t.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(src + b * c * inner, src + (b + 1) * c * inner,
                out.begin() + static_cast<long>((b * channels + offset) * inner));
    }
    offset += c;
    storages.push_back(t.storage().get());
    widths.push_back(c);
  }
  return make_op_result("concat_channels", std::move(out_shape), std::move(out), parts,
                        [storages, widths, batch, channels, inner](std::span<const double> gout) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < storages.size(); ++k) {
                            const std::size_t c = widths[k];
                            if (storages[k]->requires_grad) {
                              auto dx = work_buffer(storages[k]);
                              for (std::size_t b = 0; b < batch; ++b) {
                                const double* src = gout.data() + (b * channels + off) * inner;
                                double* dst = dx.data() + b * c * inner;
                                for (std::size_t i = 0; i < c * inner; ++i) dst[i] += src[i];
                              }
                            }
                            off += c;
                          }
                        });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: rank must be >= 1");
  const std::size_t len = x.shape().back();
  if (len == 0) throw ShapeError("softmax: empty axis");
  const std::size_t rows = x.numel() / len;
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * len;
    double* dst = out.data() + r * len;
    const double peak = *std::max_element(src, src + len);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      dst[i] = std::exp(src[i] - peak);
      total += dst[i];
    }
    for (std::size_t i = 0; i < len; ++i) dst[i] /= total;
  }
  TensorStorage* xs = x.storage().get();
  std::vector<double> probs = out;
  return make_op_result("softmax", x.shape(), std::move(out), {x},
                        [xs, rows, len, probs = std::move(probs)](std::span<const double> gout) {
                          auto dx = work_buffer(xs);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double* y = probs.data() + r * len;
                            const double* g = gout.data() + r * len;
                            double dot = 0.0;
                            for (std::size_t i = 0; i < len; ++i) dot += g[i] * y[i];
                            for (std::size_t i = 0; i < len; ++i) {
                              dx[r * len + i] += y[i] * (g[i] - dot);
                            }
                          }
                        });
}

Tensor select_row(const Tensor& matrix, std::size_t index) {
  require_rank(matrix, 2, "select_row");
  if (index >= matrix.dim(0)) throw ShapeError("select_row: index out of range");
  const std::size_t len = matrix.dim(1);
  auto in = matrix.data();
  std::vector<double> out(in.begin() + static_cast<long>(index * len),
                          in.begin() + static_cast<long>((index + 1) * len));
  TensorStorage* ms = matrix.storage().get();
  return make_op_result("select_row", {len}, std::move(out), {matrix},
                        [ms, index, len](std::span<const double> gout) {
                          auto dm = work_buffer(ms);
                          for (std::size_t i = 0; i < len; ++i) dm[index * len + i] += gout[i];
                        });
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
  std::vector<double> out;
  std::vector<TensorStorage*> storages;
  out.reserve(scalars.size());
  for (const Tensor& t : scalars) {
    if (t.numel() != 1) throw ShapeError("stack_scalars: element is not a scalar");
    out.push_back(t.item());
    storages.push_back(t.storage().get());
  }
  return make_op_result("stack_scalars", {scalars.size()}, std::move(out), scalars,
                        [storages](std::span<const double> gout) {
                          for (std::size_t i = 0; i < storages.size(); ++i) {
                            add_to_work(storages[i], gout.subspan(i, 1));
                          }
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  TensorStorage* xs = x.storage().get();
  return make_op_result("reshape", std::move(shape), std::move(out), {x},
                        [xs](std::span<const double> gout) { add_to_work(xs, gout); });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, BatchNormMode mode, double eps, double momentum) {
  if (input.rank() < 2) throw ShapeError("batch_norm: rank must be >= 2");
  if (eps <= 0.0) throw ContractError("batch_norm: eps must be positive");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t inner = input.numel() / (batch * channels);
  if (gamma.numel() != channels || beta.numel() != channels ||
      buffers.running_mean.size() != channels || buffers.running_var.size() != channels) {
    throw ShapeError("batch_norm: parameter extents do not match " + std::to_string(channels) +
                     " channels");
  }
  const std::size_t count = batch * inner;
  const double* x = input.data().data();
  std::vector<double> mean_c(channels), inv_std(channels);

  if (mode == BatchNormMode::kTrain) {
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= static_cast<double>(count);
      mean_c[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased =
          count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      buffers.running_mean[c] = momentum * buffers.running_mean[c] + (1.0 - momentum) * mu;
      buffers.running_var[c] = momentum * buffers.running_var[c] + (1.0 - momentum) * unbiased;
    }
    buffers.trained = true;
  } else {
    if (!buffers.trained && !buffers.warned_untrained) {
      spdlog::warn("batch_norm evaluated before any training step; using initial running stats");
      buffers.warned_untrained = true;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      mean_c[c] = buffers.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(buffers.running_var[c] + eps);
    }
  }

  const double* g = gamma.data().data();
  const double* bt = beta.data().data();
  std::vector<double> normalized(input.numel());
  std::vector<double> out(input.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double xh = (x[base + i] - mean_c[c]) * inv_std[c];
        normalized[base + i] = xh;
        out[base + i] = g[c] * xh + bt[c];
      }
    }
  }

  TensorStorage* xs = input.storage().get();
  TensorStorage* gs = gamma.storage().get();
  TensorStorage* bs = beta.storage().get();
  const bool train = mode == BatchNormMode::kTrain;
  return make_op_result(
      "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
      [xs, gs, bs, train, batch, channels, inner, count, inv_std,
       normalized = std::move(normalized)](std::span<const double> gout) {
        std::vector<double> sum_dy(channels, 0.0), sum_dy_xh(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy[c] += gout[base + i];
              sum_dy_xh[c] += gout[base + i] * normalized[base + i];
            }
          }
        }
        if (gs->requires_grad) {
          auto dg = work_buffer(gs);
          for (std::size_t c = 0; c < channels; ++c) dg[c] += sum_dy_xh[c];
        }
        if (bs->requires_grad) {
          auto db = work_buffer(bs);
          for (std::size_t c = 0; c < channels; ++c) db[c] += sum_dy[c];
        }
        if (!xs->requires_grad) return;
        auto dx = work_buffer(xs);
        const double n = static_cast<double>(count);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * inner;
            const double scale = gs->data[c] * inv_std[c];
            if (train) {
              const double mdy = sum_dy[c] / n;
              const double mdyx = sum_dy_xh[c] / n;
              for (std::size_t i = 0; i < inner; ++i) {
                dx[base + i] += scale * (gout[base + i] - mdy - normalized[base + i] * mdyx);
              }
            } else {
              for (std::size_t i = 0; i < inner; ++i) dx[base + i] += scale * gout[base + i];
            }
          }
        }
      });
}

}  // namespace p2net
