#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dlmbir/data_sim.hpp"
#include "dlmbir/errors.hpp"
#include "dlmbir/eval.hpp"
#include "dlmbir/gradcheck.hpp"
#include "dlmbir/inference.hpp"
#include "dlmbir/network.hpp"
#include "dlmbir/trainer.hpp"

namespace py = pybind11;
using namespace dlmbir;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const CArray<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<T> data(a.data(), a.data() + a.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
CArray<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  CArray<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

VolumeHU to_volume(const CArray<float>& a) {
  if (a.ndim() != 3) throw ShapeError("expected a (slices, rows, cols) array, got ndim " + std::to_string(a.ndim()));
  VolumeHU v(VolumeDims{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                        static_cast<std::size_t>(a.shape(2))});
  std::copy(a.data(), a.data() + a.size(), v.voxels.begin());
  return v;
}

CArray<float> from_volume(const VolumeHU& v) {
  CArray<float> out({v.dims.slices, v.dims.rows, v.dims.cols});
  std::copy(v.voxels.begin(), v.voxels.end(), out.mutable_data());
  return out;
}

HuRange to_range(const std::pair<double, double>& r) { return {r.first, r.second}; }

NetworkVariant make_variant(const std::string& kind, std::optional<std::size_t> window, std::size_t depth,
                            std::size_t width) {
  NetworkVariant v;
  v.kind = parse_network_kind(kind);
  v.depth = depth;
  v.width = width;
  if (window) {
    v.window = *window;
  } else {
    v.window = v.kind == NetworkKind::two_d ? 1 : v.kind == NetworkKind::three_d ? 7 : 3;
  }
  v.validate();
  return v;
}

/// float32 network handle.
struct Network {
  NetworkParams<float> params;

  std::string kind() const { return to_string(params.variant.kind); }
};

py::dict variant_dict(const NetworkVariant& v) {
  py::dict d;
  d["kind"] = to_string(v.kind);
  d["window"] = v.window;
  d["depth"] = v.depth;
  d["width"] = v.width;
  d["label"] = v.label();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Residual CNN post-processing of sparse-view FBP volumes";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<EmptyMaskError>(m, "EmptyMaskError", PyExc_ValueError);
  py::register_exception<NonFiniteGradientError>(m, "NonFiniteGradientError", PyExc_ArithmeticError);

  // Data simulation.
  m.def(
      "generate_phantom",
      [](std::uint64_t seed, std::size_t slices, std::size_t rows, std::size_t cols) {
        return from_volume(generate_phantom_volume(seed, {slices, rows, cols}).volume);
      },
      py::arg("seed"), py::arg("slices"), py::arg("rows"), py::arg("cols"),
      "Ground-truth HU volume (slices, rows, cols) of smoothly varying ellipses.");

  m.def(
      "make_pair",
      [](const CArray<float>& truth, std::size_t views, double noise_sigma, std::uint64_t seed) {
        const VolumeHU gt = to_volume(truth);
        VolumePair pair;
        {
          py::gil_scoped_release release;
          pair = make_pair(gt, views, noise_sigma, seed);
        }
        return from_volume(pair.fbp);
      },
      py::arg("truth"), py::arg("views"), py::arg("noise_sigma"), py::arg("seed"),
      "Sparse-view FBP reconstruction of a HU volume, slice by slice.");

  m.def("uniform_angles", &uniform_angles, py::arg("views"));
  m.def("default_detector_count", &default_detector_count, py::arg("rows"), py::arg("cols"));

  m.def(
      "radon",
      [](const CArray<double>& image, const std::vector<double>& angles, std::optional<std::size_t> detectors) {
        if (image.ndim() != 2) throw ShapeError("radon expects a 2-D image");
        const auto rows = static_cast<std::size_t>(image.shape(0)), cols = static_cast<std::size_t>(image.shape(1));
        const Sinogram s = radon(to_tensor(image), angles, detectors.value_or(default_detector_count(rows, cols)));
        CArray<double> out({s.angles.size(), s.detectors});
        std::copy(s.values.begin(), s.values.end(), out.mutable_data());
        return out;
      },
      py::arg("image"), py::arg("angles"), py::arg("detectors") = py::none(),
      "Parallel-beam line integrals, shape (angles, detectors).");

  m.def(
      "fbp",
      [](const CArray<double>& sinogram, const std::vector<double>& angles, std::size_t rows, std::size_t cols) {
        if (sinogram.ndim() != 2) throw ShapeError("fbp expects a 2-D sinogram");
        Sinogram s;
        s.angles = angles;
        s.detectors = static_cast<std::size_t>(sinogram.shape(1));
        s.rows = rows;
        s.cols = cols;
        s.values.assign(sinogram.data(), sinogram.data() + sinogram.size());
        return to_array(fbp(s));
      },
      py::arg("sinogram"), py::arg("angles"), py::arg("rows"), py::arg("cols"));

  m.def(
      "hu_normalize",
      [](const CArray<float>& volume, std::pair<double, double> window, bool clip) {
        return to_array(hu_normalize<float>(to_volume(volume), to_range(window), clip).data);
      },
      py::arg("volume"), py::arg("window") = std::pair{0.0, 2000.0}, py::arg("clip") = false);

  m.def(
      "hu_denormalize",
      [](const CArray<float>& normalized, std::pair<double, double> window) {
        return from_volume(hu_denormalize<float>(to_tensor(normalized), to_range(window)));
      },
      py::arg("normalized"), py::arg("window") = std::pair{0.0, 2000.0});

  m.def(
      "save_volume", [](const CArray<float>& volume, const std::filesystem::path& path) {
        save_volume(to_volume(volume), path);
      },
      py::arg("volume"), py::arg("path"));
  m.def(
      "load_volume", [](const std::filesystem::path& path) { return from_volume(load_volume(path)); },
      py::arg("path"));

  m.def(
      "extract_patches",
      [](const CArray<float>& y, const CArray<float>& x, std::size_t patch_size, std::size_t window,
         std::size_t count, std::uint64_t seed, bool augment, bool volumetric_target) {
        PatchSpec spec;
        spec.patch_size = patch_size;
        spec.window = window;
        spec.count = count;
        spec.seed = seed;
        spec.augment = augment;
        spec.volumetric_target = volumetric_target;
        const PatchSet<float> set = extract_patches(to_tensor(y), to_tensor(x), spec);
        return py::make_tuple(to_array(set.inputs), to_array(set.targets));
      },
      py::arg("y"), py::arg("x"), py::arg("patch_size") = 30, py::arg("window") = 1, py::arg("count") = 1000,
      py::arg("seed") = 0, py::arg("augment") = true, py::arg("volumetric_target") = false,
      "(inputs, residual targets) from normalized FBP and ground-truth volumes.");

  // Network.
  py::class_<Network>(m, "Network")
      .def(py::init([](const std::string& kind, std::optional<std::size_t> window, std::size_t depth,
                       std::size_t width, std::uint64_t seed) {
             return Network{build_network<float>(make_variant(kind, window, depth, width), seed)};
           }),
           py::arg("kind") = "2d", py::arg("window") = py::none(), py::arg("depth") = 17, py::arg("width") = 64,
           py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& path) { return Network{load_checkpoint<float>(path)}; },
          py::arg("path"))
      .def(
          "save", [](const Network& n, const std::filesystem::path& path) { save_checkpoint(n.params, path); },
          py::arg("path"))
      .def_property_readonly("kind", &Network::kind)
      .def_property_readonly("window", [](const Network& n) { return n.params.variant.window; })
      .def_property_readonly("depth", [](const Network& n) { return n.params.variant.depth; })
      .def_property_readonly("width", [](const Network& n) { return n.params.variant.width; })
      .def_property_readonly("variant", [](const Network& n) { return variant_dict(n.params.variant); })
      .def_property_readonly("step", [](const Network& n) { return n.params.step; })
      .def_property_readonly("parameter_count", [](const Network& n) { return n.params.parameter_count(); })
      .def("zero_last_layer", [](Network& n) { zero_last_layer(n.params); })
      .def(
          "forward",
          [](const Network& n, const CArray<float>& sample) {
            Tensor<float> input = to_tensor(sample), out;
            {
              py::gil_scoped_release release;
              out = forward(n.params, input);
            }
            return to_array(out);
          },
          py::arg("sample"), "Residual for one sample (infer-mode batch norm).")
      .def(
          "infer",
          [](const Network& n, const CArray<float>& volume) {
            Tensor<float> y = to_tensor(volume);
            Tensor<float> out;
            {
              py::gil_scoped_release release;
              out = infer_volume(n.params, y);
            }
            return to_array(out);
          },
          py::arg("volume"), "Reconstruct every slice of a normalized (slices, rows, cols) volume.")
      .def(
          "infer_hu",
          [](const Network& n, const CArray<float>& volume) {
            VolumeHU y = to_volume(volume), out;
            {
              py::gil_scoped_release release;
              out = infer_volume_hu(n.params, y);
            }
            return from_volume(out);
          },
          py::arg("volume"), "HU in, HU out.")
      .def("__repr__", [](const Network& n) {
        return "<dlmbir.Network " + n.params.variant.label() + " depth=" + std::to_string(n.params.variant.depth) +
               " width=" + std::to_string(n.params.variant.width) + ">";
      });

  m.def(
      "train",
      [](const CArray<float>& fbp_hu, const CArray<float>& truth_hu, const std::string& kind,
         std::optional<std::size_t> window, std::size_t depth, std::size_t width, std::size_t patch_size,
         std::size_t patches, std::size_t epochs, std::size_t batch_size, double learning_rate, std::size_t shards,
         std::uint64_t seed) {
        const NetworkVariant variant = make_variant(kind, window, depth, width);
        const Tensor<float> y = hu_normalize<float>(to_volume(fbp_hu)).data;
        const Tensor<float> x = hu_normalize<float>(to_volume(truth_hu)).data;
        PatchSpec spec;
        spec.patch_size = patch_size;
        spec.window = variant.window;
        spec.count = patches;
        spec.seed = seed;
        spec.volumetric_target = variant.volumetric();
        TrainingConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.learning_rate = learning_rate;
        tc.shards = shards;
        tc.seed = seed;
        const PatchSet<float> set = extract_patches(y, x, spec);
        TrainResult<float> result;
        {
          py::gil_scoped_release release;
          result = train(set, variant, tc);
        }
        py::list history;
        for (const LossRecord& r : result.history) {
          py::dict d;
          d["step"] = r.step;
          d["epoch"] = r.epoch;
          d["train_loss"] = r.train_loss;
          d["val_loss"] = r.val_loss;
          d["val_psnr_db"] = r.val_psnr_db;
          d["wall_time_s"] = r.wall_time_s;
          history.append(d);
        }
        return py::make_tuple(Network{std::move(result.params)}, history);
      },
      py::arg("fbp_hu"), py::arg("truth_hu"), py::arg("kind") = "2d", py::arg("window") = py::none(),
      py::arg("depth") = 17, py::arg("width") = 64, py::arg("patch_size") = 30, py::arg("patches") = 5000,
      py::arg("epochs") = 10, py::arg("batch_size") = 64, py::arg("learning_rate") = 1e-3, py::arg("shards") = 1,
      py::arg("seed") = 0,
      "Extract patches from a HU volume pair and train with ADAM. Returns (Network, history).");

  // Evaluation.
  m.def(
      "masked_mse",
      [](const CArray<float>& x, const CArray<float>& reference, std::pair<double, double> mask,
         std::pair<double, double> window) {
        const MaskedError e = masked_mse(to_volume(x), to_volume(reference), to_range(mask), to_range(window));
        return py::make_tuple(e.mse, e.count);
      },
      py::arg("x"), py::arg("reference"), py::arg("mask") = std::pair{700.0, 1500.0},
      py::arg("window") = std::pair{0.0, 2000.0}, "(mse, voxel count) over the reference mask.");

  m.def("psnr", &psnr, py::arg("mse"));

  m.def(
      "masked_psnr",
      [](const CArray<float>& x, const CArray<float>& reference, std::pair<double, double> mask,
         std::pair<double, double> window) {
        return psnr(masked_mse(to_volume(x), to_volume(reference), to_range(mask), to_range(window)).mse);
      },
      py::arg("x"), py::arg("reference"), py::arg("mask") = std::pair{700.0, 1500.0},
      py::arg("window") = std::pair{0.0, 2000.0});

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& kind, std::optional<std::size_t> window) {
        GradcheckOptions opt;
        opt.seed = seed;
        opt.variant = make_variant(kind, window, 3, 3);
        const GradcheckReport report = run_gradcheck(opt);
        py::list rows;
        for (const GradcheckRow& r : report.rows) {
          py::dict d;
          d["layer"] = r.layer;
          d["argument"] = r.argument;
          d["max_rel_error"] = r.max_rel_error;
          d["checked"] = r.checked;
          d["passed"] = r.passed;
          rows.append(d);
        }
        return py::make_tuple(report.passed(), rows);
      },
      py::arg("seed") = 0, py::arg("kind") = "2d", py::arg("window") = py::none(),
      "Finite-difference check of every layer in 64-bit. Returns (passed, rows).");
}
