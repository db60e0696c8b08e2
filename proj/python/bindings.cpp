/*
 * Copyright 2026 The hmbound Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hmbound/basis.hpp"
#include "hmbound/emulator.hpp"
#include "hmbound/error.hpp"
#include "hmbound/history_match.hpp"
#include "hmbound/pipeline.hpp"

namespace py = pybind11;
using namespace hmbound;

namespace {

basis::Weight weight_from(const std::optional<MatrixXd>& cov) {
  return cov ? basis::Weight::dense(*cov) : basis::Weight::identity();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Boundary-condition history matching core.";

  // hmbound errors surface as _core.Error with a `kind` attribute.
  m.attr("Error") = py::reinterpret_steal<py::object>(PyErr_NewException("hmbound._core.Error", PyExc_RuntimeError, nullptr));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object cls = py::module_::import("hmbound._core").attr("Error");
      py::object err = cls(std::string(e.kind()) + ": " + e.what());
      err.attr("kind") = e.kind();
      PyErr_SetObject(cls.ptr(), err.ptr());
    }
  });

  // Implausibility.
  m.def("chi2_quantile", &hm::chi2_quantile, py::arg("df"), py::arg("p"));
  m.def("chi2_bound", &hm::chi2_bound, py::arg("ell"));
  m.def("scaled_implausibility", &hm::scaled_implausibility, py::arg("impl"), py::arg("ell"));
  m.def("implausibility", py::overload_cast<const VectorXd&, const VectorXd&, const MatrixXd&>(&hm::implausibility),
        py::arg("z"), py::arg("mean"), py::arg("total_var"));
  m.def("jth_max", &hm::jth_max, py::arg("values"), py::arg("j"));
  m.def("evaluate_bound", [](const std::string& expr, Index ell) { return hm::evaluate_bound(expr, ell); },
        py::arg("expr"), py::arg("ell"));

  // Bases.
  py::class_<basis::Basis>(m, "Basis")
      .def_readonly("vectors", &basis::Basis::vectors)
      .def_readonly("singular_values", &basis::Basis::singular_values)
      .def("rank", &basis::Basis::rank)
      .def("truncated", &basis::Basis::truncated, py::arg("q"))
      .def("explained_fraction", &basis::Basis::explained_fraction);

  m.def("svd_basis", [](const MatrixXd& raw) {
    const auto ens = basis::CentredEnsemble::from_raw(raw);
    return py::make_tuple(basis::svd_basis(ens), VectorXd(ens.mean()));
  }, py::arg("ensemble"), "SVD basis of a raw l x n ensemble; returns (basis, mean).");
  m.def("project", [](const basis::Basis& b, const VectorXd& field, const VectorXd& mean, std::optional<MatrixXd> w) {
    return basis::project(b, weight_from(w), field, mean);
  }, py::arg("basis"), py::arg("field"), py::arg("mean"), py::arg("weight") = py::none());
  m.def("reconstruct", &basis::reconstruct, py::arg("basis"), py::arg("coeffs"), py::arg("mean"));
  m.def("recon_error", [](const MatrixXd& b, const VectorXd& z, std::optional<MatrixXd> w) {
    return basis::recon_error(b, weight_from(w), z);
  }, py::arg("vectors"), py::arg("z"), py::arg("weight") = py::none());
  m.def("optimal_rotation", [](const basis::Basis& full, const VectorXd& z, Index n_keep, std::optional<MatrixXd> w,
                               double min_signal) {
    const basis::Rotation r = basis::optimal_rotation(full, weight_from(w), z, {n_keep, min_signal, {}});
    return py::make_tuple(r.basis, r.error, r.truncated_error);
  }, py::arg("basis"), py::arg("z"), py::arg("n_keep"), py::arg("weight") = py::none(),
     py::arg("min_signal") = basis::kDefaultMinSignal,
     "Returns (rotated basis, R_W rotated, R_W truncated).");

  // Emulators.
  py::class_<gp::GpEmulator>(m, "GpEmulator")
      .def_static("fit", [](const MatrixXd& design, const VectorXd& y, bool linear, int restarts, std::uint64_t seed) {
        gp::FitOptions o;
        o.mean = linear ? gp::MeanSpec::kLinear : gp::MeanSpec::kConstant;
        o.restarts = restarts;
        o.seed = seed;
        return gp::GpEmulator::fit(design, y, o);
      }, py::arg("design"), py::arg("targets"), py::arg("linear_mean") = true, py::arg("restarts") = 10,
         py::arg("seed") = 0)
      .def("predict", [](const gp::GpEmulator& g, const MatrixXd& x) {
        VectorXd mean, var;
        g.predict_batch(x, mean, &var);
        return py::make_tuple(mean, var);
      }, py::arg("x"), "Rows of x are points; returns (mean, variance).")
      .def("loo_standardized", [](const gp::GpEmulator& g) { return g.loo().standardized; })
      .def("nugget_variance", [](const gp::GpEmulator& g) { return g.hyperparameters().nugget_variance(); })
      .def("length_scales", [](const gp::GpEmulator& g) { return g.hyperparameters().length_scales; })
      .def("to_json", &gp::GpEmulator::to_json)
      .def_static("from_json", &gp::GpEmulator::from_json);

  // Pipeline.
  py::class_<pipeline::Pipeline>(m, "Pipeline")
      .def(py::init([](const std::filesystem::path& config, const std::filesystem::path& out) {
        return std::make_unique<pipeline::Pipeline>(pipeline::PipelineConfig::load(config), out);
      }), py::arg("config"), py::arg("out"))
      .def_static("from_json", [](const std::string& text, const std::filesystem::path& out) {
        return std::make_unique<pipeline::Pipeline>(pipeline::PipelineConfig::parse(text), out);
      }, py::arg("text"), py::arg("out"))
      .def("fit_temporal", &pipeline::Pipeline::fit_temporal)
      .def("fit_spatial", &pipeline::Pipeline::fit_spatial)
      .def("make_truth", &pipeline::Pipeline::make_truth)
      .def("prior_space", &pipeline::Pipeline::prior_space)
      .def("design", &pipeline::Pipeline::design, py::arg("wave"))
      .def("simulate", &pipeline::Pipeline::simulate, py::arg("wave"))
      .def("wave", [](pipeline::Pipeline& p, int k) { return p.wave(k).fraction; }, py::arg("wave"),
           "Runs one wave and returns its NROY fraction.")
      .def("report", &pipeline::Pipeline::report)
      .def("run_all", &pipeline::Pipeline::run_all);
}
