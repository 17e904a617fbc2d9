// Python bindings. Structured values cross the boundary as JSON text; matrices as numpy arrays.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "crel/errors.hpp"
#include "crel/evaluation.hpp"
#include "crel/experiment.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

json summary_json(const crel::ExperimentResult& r) {
  json perms = json::array();
  for (const auto& p : r.permutations) {
    json rows = json::array();
    for (std::size_t k = 0; k < p.accuracy.num_rows(); ++k) rows.push_back(p.accuracy.whole_history(k));
    perms.push_back({{"permutation", p.permutation}, {"whole_history", rows}, {"complete", p.complete}});
  }
  json out{{"directory", r.directory.string()}, {"permutations", perms}};
  if (r.summary) {
    out["mean"] = r.summary->mean;
    out["std"] = r.summary->stddev;
    out["formatted"] = crel::format_summary(*r.summary);
  }
  return out;
}

crel::ExperimentSpec spec_from(const std::string& text) { return crel::experiment_spec_from_json(json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_crel, m) {
  m.doc() = "continual relation extraction core";
  m.attr("__version__") = CREL_VERSION;

  py::register_exception<crel::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<crel::DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<crel::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const json::exception& e) {
      py::set_error(PyExc_ValueError, e.what());
    }
  });

  m.def("profile", [](const std::string& name) {
    if (name == "fewrel") return crel::to_json(crel::fewrel_profile()).dump();
    if (name == "tacred") return crel::to_json(crel::tacred_profile()).dump();
    throw crel::ConfigError("unknown profile '" + name + "'");
  });
  m.def("normalize_spec", [](const std::string& text) { return crel::to_json(spec_from(text)).dump(); });
  m.def("config_hash", [](const std::string& text) { return crel::config_hash(spec_from(text)); });
  m.def("synthetic_sequence", [](const std::string& text) {
    return crel::task_sequence_to_json(crel::generate_synthetic_sequence(crel::synthetic_spec_from_json(json::parse(text))).sequence)
        .dump();
  });

  m.def(
      "run_experiment",
      [](const std::string& text, std::optional<int> stop_after) {
        crel::RunOptions o;
        o.stop_after_task = stop_after;
        const auto spec = spec_from(text);
        py::gil_scoped_release release;
        return summary_json(crel::run_experiment(spec, o)).dump();
      },
      py::arg("spec"), py::arg("stop_after") = py::none());
  m.def("resume_experiment", [](const std::filesystem::path& dir) {
    py::gil_scoped_release release;
    return summary_json(crel::resume_experiment(dir)).dump();
  });
  m.def("load_experiment", [](const std::filesystem::path& dir) { return summary_json(crel::load_experiment(dir)).dump(); });

  m.def("combine_probs", &crel::combine_probs, py::arg("contrastive"), py::arg("linear"), py::arg("alpha"));
  m.def("predict_combined", &crel::predict_combined, py::arg("contrastive"), py::arg("linear"), py::arg("alpha"));
  m.def("cosine_matrix", &crel::cosine_matrix, py::arg("rows"));
}
