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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <spdlog/spdlog.h>

#include <cstring>

#include "p2net/augment.hpp"
#include "p2net/config.hpp"
#include "p2net/errors.hpp"
#include "p2net/experiment.hpp"
#include "p2net/gradcheck_suite.hpp"
#include "p2net/losses.hpp"
#include "p2net/metrics.hpp"
#include "p2net/network.hpp"
#include "p2net/policy_io.hpp"
#include "p2net/search.hpp"
#include "p2net/synth.hpp"

namespace py = pybind11;
using namespace p2net;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

F64 to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  F64 out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), t.numel() * sizeof(double));
  return out;
}

Image to_image(const U8& a) {
  if (a.ndim() != 3) throw ShapeError("image must be HxWxC");
  Image im(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), static_cast<int>(a.shape(2)));
  std::memcpy(im.pixels.data(), a.data(), im.pixels.size());
  return im;
}

U8 from_image(const Image& im) {
  U8 out({im.height, im.width, im.channels});
  std::memcpy(out.mutable_data(), im.pixels.data(), im.pixels.size());
  return out;
}

std::vector<Point> to_points(const F64& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("keypoints must be Nx2");
  std::vector<Point> pts;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) pts.push_back({a.at(i, 0), a.at(i, 1)});
  return pts;
}

F64 from_points(const std::vector<Point>& pts) {
  F64 out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m(i, 0) = pts[i].x;
    m(i, 1) = pts[i].y;
  }
  return out;
}

py::dict sample_to_dict(const Sample& s) {
  py::dict d;
  d["id"] = s.id;
  d["image"] = from_image(s.image);
  d["keypoints"] = from_points(s.keypoints);
  d["visibility"] = s.visibility;
  d["bbox"] = std::vector<double>{s.bbox.x, s.bbox.y, s.bbox.width, s.bbox.height};
  d["head_size"] = s.head_size;
  return d;
}

Sample sample_from(const U8& image, const F64& keypoints, std::vector<int> visibility) {
  Sample s;
  s.id = "py";
  s.image = to_image(image);
  s.keypoints = to_points(keypoints);
  if (visibility.empty()) visibility.assign(s.keypoints.size(), 2);
  s.visibility = std::move(visibility);
  s.bbox = {0, 0, static_cast<double>(s.image.width), static_cast<double>(s.image.height)};
  return s;
}

class PyNetwork {
 public:
  PyNetwork(const NetworkConfig& cfg, std::uint64_t seed) : net_(cfg, seed) {}
  py::tuple forward(const F64& images, bool train) {
    NoGradGuard guard;
    const P2NetOutput out = net_.forward(to_tensor(images), train ? Mode::kTrain : Mode::kEval);
    return py::make_tuple(to_array(out.parallel), to_array(out.refined));
  }
  std::size_t parameter_count() const { return net_.store().parameter_count(); }
  const NetworkConfig& config() const { return net_.config(); }

 private:
  P2Net net_;
};

}  // namespace

PYBIND11_MODULE(_p2net, m) {
  m.doc() = "Multi-scale pose network, augmentation search and keypoint metrics";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.def(
      "set_log_level",
      [](const std::string& level) {
        const auto lv = spdlog::level::from_str(level);
        if (lv == spdlog::level::off && level != "off") throw ConfigError("unknown log level: " + level);
        spdlog::set_level(lv);
      },
      py::arg("level"), "One of trace, debug, info, warn, error, critical, off.");

  // Metrics -----------------------------------------------------------
  m.def(
      "oks",
      [](const F64& pred, const F64& gt, const std::vector<int>& vis, const std::vector<double>& k,
         double scale) { return oks(to_points(pred), to_points(gt), vis, {k, scale}); },
      py::arg("pred"), py::arg("gt"), py::arg("visibility"), py::arg("k"), py::arg("scale"),
      "Object keypoint similarity; None when no keypoint is visible.");
  m.def(
      "ap_ar",
      [](const std::vector<std::tuple<std::vector<double>, std::vector<std::vector<double>>, std::size_t>>& images) {
        std::vector<ImageMatches> in;
        for (const auto& [scores, o, n] : images) in.push_back({scores, o, n});
        const ApResult r = ap_ar(in);
        py::dict d;
        d["ap"] = r.ap;
        d["ap50"] = r.ap50;
        d["ap75"] = r.ap75;
        d["ar"] = r.ar;
        d["ap_per_threshold"] = r.ap_per_threshold;
        d["recall_per_threshold"] = r.recall_per_threshold;
        return d;
      },
      py::arg("images"), "Per image: (scores, oks[pred][gt], ground_truth_count).");
  m.def(
      "pckh",
      [](const std::vector<F64>& pred, const std::vector<F64>& gt,
         const std::vector<std::vector<int>>& vis, const std::vector<double>& heads, double thresh) {
        std::vector<std::vector<Point>> p, g;
        for (const auto& a : pred) p.push_back(to_points(a));
        for (const auto& a : gt) g.push_back(to_points(a));
        const PckhResult r = pckh(p, g, vis, heads, thresh);
        return py::make_tuple(r.total, r.per_keypoint);
      },
      py::arg("pred"), py::arg("gt"), py::arg("visibility"), py::arg("head_sizes"),
      py::arg("threshold") = 0.5);

  // Heatmaps ----------------------------------------------------------
  m.def(
      "render_target",
      [](const F64& kps, std::vector<int> vis, std::size_t h, std::size_t w, int stride, double sigma) {
        const auto pts = to_points(kps);
        if (vis.empty()) vis.assign(pts.size(), 2);
        const auto v = render_target(pts, vis, h, w, {stride, sigma, 3.0});
        F64 out({static_cast<py::ssize_t>(pts.size()), static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
        std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
        return out;
      },
      py::arg("keypoints"), py::arg("visibility") = std::vector<int>{}, py::arg("height"),
      py::arg("width"), py::arg("stride") = 4, py::arg("sigma") = 2.0);
  m.def(
      "decode",
      [](const F64& heatmaps, int stride) {
        const HeatmapSet hm = HeatmapSet::from_tensor(to_tensor(heatmaps), stride);
        std::vector<std::vector<std::tuple<double, double, double>>> out;
        for (const auto& row : decode(hm)) {
          auto& dst = out.emplace_back();
          for (const auto& k : row) dst.emplace_back(k.x, k.y, k.confidence);
        }
        return out;
      },
      py::arg("heatmaps"), py::arg("stride") = 4, "Decode [B,K,h,w] heatmaps to (x, y, confidence).");

  // Losses ------------------------------------------------------------
  m.def(
      "l2_loss",
      [](const F64& pred, const F64& target, const F64& mask) {
        return l2_loss(to_tensor(pred), to_tensor(target), to_tensor(mask)).item();
      },
      py::arg("pred"), py::arg("target"), py::arg("mask"));
  m.def(
      "ohkm_loss",
      [](const F64& pred, const F64& target, const F64& mask, int alpha_k) {
        return ohkm_loss(to_tensor(pred), to_tensor(target), to_tensor(mask), alpha_k).item();
      },
      py::arg("pred"), py::arg("target"), py::arg("mask"), py::arg("alpha_k"));

  // Augmentation ------------------------------------------------------
  m.def("aug_kinds", [] {
    std::vector<std::string> names;
    for (AugKind k : kAllAugKinds) names.emplace_back(to_string(k));
    return names;
  });
  m.def(
      "apply_op",
      [](const U8& image, const F64& keypoints, const std::string& kind, double magnitude,
         double probability, std::uint64_t seed) {
        Rng rng(seed);
        const Sample out = apply_op(sample_from(image, keypoints, {}),
                                    {aug_kind_from_string(kind), probability, magnitude}, rng);
        return py::make_tuple(from_image(out.image), from_points(out.keypoints), out.visibility);
      },
      py::arg("image"), py::arg("keypoints"), py::arg("kind"), py::arg("magnitude"),
      py::arg("probability") = 1.0, py::arg("seed") = 0);
  m.def(
      "apply_photometric",
      [](const U8& image, const std::string& kind, double param, std::uint64_t seed) {
        Rng rng(seed);
        return from_image(apply_photometric(to_image(image), aug_kind_from_string(kind), param, rng));
      },
      py::arg("image"), py::arg("kind"), py::arg("param"), py::arg("seed") = 0);
  m.def("denormalize", [](const std::string& kind, double m) {
    return denormalize(aug_kind_from_string(kind), m);
  });
  m.def("load_policy", [](const std::filesystem::path& p) { return policy_to_json(load_policy(p)); },
        "Read a policy file and return its canonical JSON text.");

  // Data --------------------------------------------------------------
  m.def(
      "synth_sample",
      [](int size, int joints, double rotation, std::uint64_t seed) {
        SynthConfig c;
        c.image_width = c.image_height = size;
        c.joints = joints;
        c.validate();
        return sample_to_dict(synth_sample(c, "py", rotation, seed));
      },
      py::arg("size") = 64, py::arg("joints") = 5, py::arg("rotation") = 0.0, py::arg("seed") = 0);

  // Network -----------------------------------------------------------
  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init<>())
      .def_readwrite("input_height", &NetworkConfig::input_height)
      .def_readwrite("input_width", &NetworkConfig::input_width)
      .def_readwrite("backbone_widths", &NetworkConfig::backbone_widths)
      .def_readwrite("pyramid_width", &NetworkConfig::pyramid_width)
      .def_readwrite("parallel_stages", &NetworkConfig::parallel_stages)
      .def_readwrite("dilation", &NetworkConfig::dilation)
      .def_readwrite("keypoints", &NetworkConfig::keypoints)
      .def_readwrite("heatmap_stride", &NetworkConfig::heatmap_stride)
      .def("validate", &NetworkConfig::validate);
  py::class_<PyNetwork>(m, "P2Net")
      .def(py::init<const NetworkConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def("forward", &PyNetwork::forward, py::arg("images"), py::arg("train") = false,
           "Returns (parallel, refined) heatmaps for [B,C,H,W] inputs.")
      .def_property_readonly("parameter_count", &PyNetwork::parameter_count)
      .def_property_readonly("config", &PyNetwork::config);

  // Search toy --------------------------------------------------------
  m.def(
      "bilinear_hypergradient",
      [](double a, double w, double x, double zeta, double eps_scale) {
        Tensor at = Tensor::from_data({1}, {a}, true);
        Tensor wt = Tensor::from_data({1}, {w}, true);
        BilevelObjective obj = BilevelObjective::from_losses(
            {wt}, {at}, [at, wt, x] { return scalar_mul(mul(at, wt), x); },
            [wt] { return scalar_mul(square(wt), 0.5); });
        return hypergradient(obj, zeta, eps_scale).alpha_grad[0][0];
      },
      py::arg("a"), py::arg("w"), py::arg("x"), py::arg("zeta"), py::arg("eps_scale") = 0.01,
      "Finite-difference hypergradient of the toy L_train = a*w*x, L_val = w^2/2.");

  // Experiments -------------------------------------------------------
  auto load = [](const std::filesystem::path& cfg, const std::filesystem::path& data) {
    ExperimentConfig c = load_config(cfg);
    if (!data.empty()) c.data_root = std::filesystem::absolute(data);
    return c;
  };
  m.def("run_synth", [load](const std::filesystem::path& cfg, std::uint64_t seed, const std::filesystem::path& out) {
    run_synth(load(cfg, {}), seed, out);
  }, py::arg("config"), py::arg("seed"), py::arg("out"));
  m.def("run_train", [load](const std::filesystem::path& cfg, std::uint64_t seed, const std::filesystem::path& out,
                            const std::filesystem::path& data) {
    return run_train(load(cfg, data), seed, out).losses;
  }, py::arg("config"), py::arg("seed"), py::arg("out"), py::arg("data") = std::filesystem::path());
  m.def("run_eval", [load](const std::filesystem::path& cfg, std::uint64_t seed, const std::filesystem::path& out,
                           const std::filesystem::path& data, const std::filesystem::path& checkpoint, bool oracle) {
    ExperimentConfig c = load(cfg, data);
    if (!checkpoint.empty()) c.eval.checkpoint = checkpoint;
    const EvalResult r = run_eval(c, seed, out, oracle);
    py::dict d;
    d["ap"] = r.ap.ap;
    d["ap50"] = r.ap.ap50;
    d["ap75"] = r.ap.ap75;
    d["ar"] = r.ap.ar;
    d["pckh"] = r.pckh.total;
    d["instances"] = r.instances;
    return d;
  }, py::arg("config"), py::arg("seed"), py::arg("out"), py::arg("data") = std::filesystem::path(),
     py::arg("checkpoint") = std::filesystem::path(), py::arg("oracle") = false);
  m.def("run_search", [load](const std::filesystem::path& cfg, std::uint64_t seed, const std::filesystem::path& out,
                             const std::filesystem::path& data) {
    return policy_to_json(run_search(load(cfg, data), seed, out).policy);
  }, py::arg("config"), py::arg("seed"), py::arg("out"), py::arg("data") = std::filesystem::path());
  m.def("run_gradcheck", [](std::uint64_t seed, std::size_t instances) {
    std::vector<std::tuple<std::string, bool, double>> out;
    for (const auto& r : run_gradcheck_suite(instances, seed)) out.emplace_back(r.name, r.passed(), r.max_error);
    return out;
  }, py::arg("seed") = 0, py::arg("instances") = 2);
}
