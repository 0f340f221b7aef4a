#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sllab/assist.hpp"
#include "sllab/error.hpp"
#include "sllab/heatflow.hpp"
#include "sllab/lab.hpp"
#include "sllab/localization.hpp"
#include "sllab/measures.hpp"
#include "sllab/spectral.hpp"

namespace py = pybind11;
using namespace sllab;

namespace {

EvalMode parse_mode(const std::string& m) {
  if (m == "value") return EvalMode::kValue;
  if (m == "log") return EvalMode::kLogValue;
  if (m == "d1") return EvalMode::kD1;
  if (m == "d2") return EvalMode::kD2;
  throw py::value_error("mode must be one of value, log, d1, d2");
}

py::dict identity_dict(const IdentityResult& r) {
  py::dict d;
  d["identity"] = r.identity;
  d["lhs"] = r.lhs;
  d["rhs"] = r.rhs;
  d["abs_err"] = r.abs_err;
  d["rel_err"] = r.rel_err;
  d["tolerance"] = r.tolerance;
  d["passed"] = r.pass;
  return d;
}

RunConfig config_from(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) {
    cfg.set(py::str(k), py::str(v));
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_sllab, m) {
  m.doc() = "Stochastic-localization lab: measures, assistant functions, heat flow, spectra.";

  py::register_exception<LabError>(m, "LabError", PyExc_RuntimeError);

  m.attr("__version__") = version_string();
  m.def("measure_keys", &measure_keys);

  py::class_<MeasureModel>(m, "Measure")
      .def_readonly("key", &MeasureModel::key)
      .def_readonly("dim", &MeasureModel::dim)
      .def("sample", &MeasureModel::sample, py::arg("seed"))
      .def("log_density", [](const MeasureModel& mm, std::vector<double> x) {
        if (x.size() != mm.dim) throw py::value_error("point has the wrong dimension");
        return mm.log_density(x);
      });
  m.def("make_measure", &make_measure, py::arg("key"), py::arg("dim"));

  py::class_<AssistFn>(m, "AssistFn")
      .def_readonly("D0", &AssistFn::D0)
      .def_readonly("r0", &AssistFn::r0)
      .def_readonly("b", &AssistFn::b)
      .def_readonly("c", &AssistFn::c)
      .def_readonly("s", &AssistFn::s)
      .def_readonly("knots", &AssistFn::knots)
      .def(
          "__call__",
          [](const AssistFn& fn, py::array_t<double> r, const std::string& mode) {
            const EvalMode em = parse_mode(mode);
            return py::vectorize([&fn, em](double x) { return eval(fn, x, em); })(r);
          },
          py::arg("r"), py::arg("mode") = "value")
      .def("validate", [](const AssistFn& fn) {
        const AssistValidation v = validate(fn);
        py::dict d;
        d["ok"] = v.ok();
        d["b_window"] = v.b_window;
        d["continuity"] = v.continuity;
        d["second_derivative_bound"] = v.second_derivative_bound;
        d["worst_continuity"] = v.worst_continuity;
        d["failures"] = v.failures();
        return d;
      });
  m.def("build_assist_fn", &build_assist_fn, py::arg("D0"), py::arg("r0"));

  py::class_<Schedule>(m, "Schedule")
      .def_readonly("log_t", &Schedule::log_t)
      .def_readonly("log_abs_log_t", &Schedule::log_abs_log_t)
      .def_readonly("s_seq", &Schedule::s_seq)
      .def_readonly("k0", &Schedule::k0)
      .def_readonly("overflow_flag", &Schedule::overflow_flag);
  m.def(
      "build_schedule",
      [](double lambda, double C2, double threshold_log) {
        return build_schedule(lambda, C2, threshold_log);
      },
      py::arg("log_log_n"), py::arg("C2") = 1.0, py::arg("threshold_log") = -1000.0);

  m.def(
      "dyadic_bound",
      [](std::vector<double> h, int N) {
        const DyadicResult r = dyadic_bound_check(h, N);
        return py::make_tuple(r.lhs, r.rhs, r.pass);
      },
      py::arg("h"), py::arg("N"),
      "Samples of a non-increasing h on [0, 2^N]; returns (lhs, rhs, passed).");

  m.def(
      "ensemble_moments",
      [](const std::string& key, std::size_t dim, std::vector<double> times,
         std::size_t paths, std::uint64_t seed) {
        const MeasureModel mm = make_measure(key, dim);
        if (!mm.factor) throw py::value_error("measure is not a product");
        const ProductPosterior engine(mm);
        EnsembleSpec spec;
        spec.times = std::move(times);
        spec.paths = paths;
        spec.base_seed = seed;
        EnsembleStats st;
        {
          py::gil_scoped_release release;
          st = ensemble_stats(simulate_ensemble(mm, engine, spec));
        }
        py::dict out;
        std::vector<double> t, a2, a2_se, tr2, cons;
        for (const auto& ts : st.per_time) {
          t.push_back(ts.t);
          a2.push_back(ts.a_norm_sq.mean);
          a2_se.push_back(ts.a_norm_sq.se);
          tr2.push_back(ts.tr_A_sq.mean);
          cons.push_back(ts.conserved.mean);
        }
        out["t"] = py::array(py::cast(t));
        out["a_norm_sq"] = py::array(py::cast(a2));
        out["a_norm_sq_se"] = py::array(py::cast(a2_se));
        out["tr_A_sq"] = py::array(py::cast(tr2));
        out["conserved"] = py::array(py::cast(cons));
        return out;
      },
      py::arg("key"), py::arg("dim"), py::arg("times"), py::arg("paths") = 1000,
      py::arg("seed") = 1);

  m.def(
      "variance_identity",
      [](const std::string& key, std::size_t dim, double s) {
        return identity_dict(variance_identity_check(make_measure(key, dim), s));
      },
      py::arg("key"), py::arg("dim"), py::arg("s"));

  m.def(
      "generator_eigenvalues",
      [](const std::string& key, std::size_t cells, std::size_t K) {
        const MeasureModel mm = make_measure(key, 1);
        if (!mm.factor) throw py::value_error("measure is not a product");
        const auto dec = discretize_generator(*mm.factor, cells, K);
        return py::array(py::cast(dec.eigenvalues));
      },
      py::arg("key"), py::arg("cells") = 4000, py::arg("K") = 20);

  m.def(
      "thin_shell",
      [](const std::string& key, std::size_t cells, std::size_t K) {
        const MeasureModel mm = make_measure(key, 1);
        if (!mm.factor) throw py::value_error("measure is not a product");
        const auto r = thin_shell_bound_check(discretize_generator(*mm.factor, cells, K));
        return py::make_tuple(r.sigma_sq, r.bound, r.pass);
      },
      py::arg("key"), py::arg("cells") = 4000, py::arg("K") = 200,
      "Returns (Var(x^2), spectral bound, passed).");

  m.def("config_keys", &RunConfig::keys);
  m.def(
      "run",
      [](const py::dict& overrides) {
        const RunConfig cfg = config_from(overrides);
        RunManifest man;
        {
          py::gil_scoped_release release;
          man = run(cfg);
        }
        return manifest_json(man);
      },
      py::arg("config"),
      "Runs one experiment from key/value overrides; returns manifest JSON text.");
  m.def(
      "report_text",
      [](const std::vector<std::string>& manifests) {
        std::vector<std::pair<std::string, RunManifest>> ms;
        for (const auto& p : manifests) ms.emplace_back(p, load_manifest(p));
        std::ostringstream out;
        const Report r = report(ms);
        write_report_text(r, out);
        return py::make_tuple(out.str(), r.pass());
      },
      py::arg("manifests"));
}
