#include <cstring>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tskd/cli/cli.hpp"
#include "tskd/core/config.hpp"
#include "tskd/core/shapes.hpp"
#include "tskd/diffusion/diffusion.hpp"
#include "tskd/metrics/metrics.hpp"
#include "tskd/trainer/trainer.hpp"

namespace py = pybind11;
using namespace tskd;

namespace {

using IntArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

metrics::ClassGrid to_grid(const IntArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("masks must be 2-D");
  metrics::ClassGrid g{a.shape(0), a.shape(1), {}};
  g.data.assign(a.data(), a.data() + a.size());
  return g;
}

metrics::BinaryMaskPair to_pair(const IntArray& pred, const IntArray& ref, int cls, double sy, double sx) {
  const auto p = to_grid(pred), r = to_grid(ref);
  if (p.height != r.height || p.width != r.width) throw std::invalid_argument("mask shapes differ");
  return {p.binary(cls), r.binary(cls), sy, sx};
}

ShapesTask task_from(const std::string& s) {
  if (s == "target") return ShapesTask::target;
  if (s == "foundation") return ShapesTask::foundation;
  throw std::invalid_argument("unknown task '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_tskd, m) {
  m.doc() = "Task-specific knowledge distillation toolkit";

  m.def("run_cli", &cli::run, py::arg("args"), py::call_guard<py::gil_scoped_release>(),
        "Runs one tskd command; returns its exit code.");

  m.def("dice", [](const IntArray& p, const IntArray& r, int cls) { return metrics::dice(to_pair(p, r, cls, 1, 1)).value; },
        py::arg("predicted"), py::arg("reference"), py::arg("cls") = 1);
  m.def("hd95",
        [](const IntArray& p, const IntArray& r, int cls, double sy, double sx) {
          return metrics::hd95(to_pair(p, r, cls, sy, sx));
        },
        py::arg("predicted"), py::arg("reference"), py::arg("cls") = 1, py::arg("spacing_y") = 1.0,
        py::arg("spacing_x") = 1.0);
  m.def("miou", [](const IntArray& p, const IntArray& r, int c) { return metrics::miou(to_grid(p), to_grid(r), c).value; },
        py::arg("predicted"), py::arg("reference"), py::arg("class_count"));
  m.def("evaluate_csv",
        [](const std::vector<IntArray>& preds, const std::vector<IntArray>& refs, int classes, double spacing) {
          std::vector<metrics::ClassGrid> p, r;
          for (const auto& a : preds) p.push_back(to_grid(a));
          for (const auto& a : refs) r.push_back(to_grid(a));
          return metrics::evaluate(p, r, classes, {}, spacing).to_csv();
        },
        py::arg("predicted"), py::arg("reference"), py::arg("class_count"), py::arg("spacing") = 1.0);
  m.def("psnr_from_mse", &metrics::psnr_from_mse, py::arg("mse"), py::arg("peak") = 255.0);

  m.def("config_json",
        [](bool desk) {
          ExperimentConfig cfg;
          return (desk ? cfg.desk() : cfg).to_json().dump();
        },
        py::arg("desk") = false);
  m.def("distillation_json", [](const std::string& name) {
    return trainer::DistillationConfig::preset(name).to_json().dump();
  });
  m.def("distillation_presets", &trainer::DistillationConfig::preset_names);

  m.def("make_shapes_sample",
        [](const std::string& task, std::uint64_t seed, std::int64_t index, std::int64_t size) {
          const auto s = make_shapes_sample(task_from(task), seed, index, size);
          const auto img = s.image.select(2, 0).contiguous();
          const auto mask = s.mask.contiguous();
          py::array_t<float> image({size, size});
          py::array_t<std::uint8_t> labels({size, size});
          std::memcpy(image.mutable_data(), img.data_ptr<float>(), sizeof(float) * img.numel());
          std::memcpy(labels.mutable_data(), mask.data_ptr<std::uint8_t>(), mask.numel());
          return py::make_tuple(image, labels);
        },
        py::arg("task"), py::arg("seed"), py::arg("index"), py::arg("size") = 64);

  py::class_<diffusion::DiffusionSchedule>(m, "DiffusionSchedule")
      .def_static("linear", &diffusion::DiffusionSchedule::linear, py::arg("T"), py::arg("beta_start") = 1e-4,
                  py::arg("beta_end") = 0.02)
      .def_property_readonly("T", &diffusion::DiffusionSchedule::T)
      .def("alpha", &diffusion::DiffusionSchedule::alpha)
      .def("alpha_bar", &diffusion::DiffusionSchedule::alpha_bar)
      .def("snr", &diffusion::DiffusionSchedule::snr);
}
