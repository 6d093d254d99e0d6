#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <optional>
#include <string>

#include "kpl/error.hpp"
#include "kpl/fixture.hpp"
#include "kpl/io.hpp"
#include "kpl/ot.hpp"
#include "kpl/pipeline.hpp"
#include "kpl/proxy_learner.hpp"

namespace py = pybind11;
using namespace kpl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a, const char* name) {
  if (a.ndim() != 2) raise<UsageError>(name, " must be a 2-d array, got ", a.ndim(), " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  if (m.size() > 0) std::memcpy(out.mutable_data(), m.data().data(), m.size() * sizeof(double));
  return out;
}

ot::ClassMarginal marginal_or_uniform(const std::optional<std::vector<double>>& q, std::size_t k) {
  return q ? ot::ClassMarginal::normalized(*q) : ot::ClassMarginal::uniform(k);
}

py::dict solve_ot(const Array& m_in, double tau_ot, const std::string& algorithm, double tolerance,
                  std::size_t max_iterations, const std::optional<std::vector<double>>& marginal) {
  const Matrix m = to_matrix(m_in, "similarity");
  ot::SolverConfig cfg;
  cfg.tau_ot = tau_ot;
  cfg.algorithm = ot::parse_algorithm(algorithm);
  cfg.tolerance = tolerance;
  cfg.max_iterations = max_iterations;
  const ot::TransportPlan plan = ot::solve(m, cfg, marginal_or_uniform(marginal, m.cols()));
  py::dict out;
  out["plan"] = to_array(plan.plan());
  out["pseudo_labels"] = to_array(ot::pseudo_labels(plan));
  out["iterations"] = plan.iterations_used;
  out["row_violation"] = plan.final_row_violation;
  out["col_violation"] = plan.final_col_violation;
  out["converged"] = plan.converged;
  out["objective"] = ot::entropic_objective(plan, m, tau_ot);
  return out;
}

py::dict learn(const Array& images, const Array& labels, const Array& init, double tau_learn,
               double learning_rate, double momentum, std::size_t epochs, double loss_tolerance) {
  learner::LearnConfig cfg;
  cfg.tau_learn = tau_learn;
  cfg.learning_rate = learning_rate;
  cfg.momentum = momentum;
  cfg.max_epochs = epochs;
  cfg.loss_tolerance = loss_tolerance;
  const learner::LearnResult r = learner::learn(to_matrix(images, "images"), to_matrix(labels, "labels"),
                                                to_matrix(init, "init"), cfg);
  py::dict out;
  out["weights"] = to_array(r.weights);
  out["losses"] = r.trace.losses;
  out["epochs_run"] = r.trace.epochs_run;
  out["stop_reason"] = std::string(learner::to_string(r.trace.stop_reason));
  return out;
}

std::string run_pipeline(const std::string& mode, const std::filesystem::path& images,
                         const std::filesystem::path& kb, const std::optional<std::filesystem::path>& names,
                         const std::optional<std::filesystem::path>& labels,
                         const std::optional<std::filesystem::path>& marginal, std::optional<std::size_t> k,
                         const std::optional<std::string>& algorithm, std::optional<double> tau_ot,
                         std::optional<double> tau_learn, std::optional<double> learning_rate,
                         std::optional<std::size_t> epochs, bool include_timing) {
  pipeline::RunSpec spec;
  spec.mode = parse_mode(mode);
  spec.images = images;
  spec.kb = kb;
  spec.names = names;
  spec.labels = labels;
  spec.marginal = marginal;
  spec.k = k;
  if (algorithm) spec.algorithm = ot::parse_algorithm(*algorithm);
  spec.tau_ot = tau_ot;
  spec.tau_learn = tau_learn;
  spec.learning_rate = learning_rate;
  spec.epochs = epochs;
  return io::report_to_json(pipeline::run(spec), include_timing);
}

fixture::FixtureFiles gen_fixture(const std::filesystem::path& out, std::uint64_t seed, std::size_t n,
                                  std::size_t k, std::size_t dim) {
  fixture::FixtureSpec spec;
  spec.seed = seed;
  spec.num_images = n;
  spec.num_classes = k;
  spec.dim = dim;
  return fixture::write(fixture::generate(spec), out);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "KPL zero-shot classification engine";
  m.attr("__version__") = KPL_VERSION;

  auto base = py::register_exception<Error>(m, "KplError", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<InternalError>(m, "InternalError", base.ptr());

  m.def("solve_ot", &solve_ot, py::arg("similarity"), py::arg("tau_ot") = 0.01,
        py::arg("algorithm") = "stable_greenkhorn", py::arg("tolerance") = 1e-6,
        py::arg("max_iterations") = 100000, py::arg("marginal") = py::none(),
        "Entropic OT plan between images (mass 1/N each) and classes.");

  m.def("learn", &learn, py::arg("images"), py::arg("labels"), py::arg("init"), py::arg("tau_learn") = 0.01,
        py::arg("learning_rate") = 0.02, py::arg("momentum") = 0.9, py::arg("epochs") = 500,
        py::arg("loss_tolerance") = 1e-7, "Proxy learning by KL minimization.");

  m.def(
      "loss",
      [](const Array& w, const Array& x, const Array& q, double tau) {
        return learner::loss(to_matrix(w, "weights"), to_matrix(x, "images"), to_matrix(q, "labels"), tau);
      },
      py::arg("weights"), py::arg("images"), py::arg("labels"), py::arg("tau"));

  m.def(
      "gradient",
      [](const Array& w, const Array& x, const Array& q, double tau) {
        return to_array(
            learner::gradient(to_matrix(w, "weights"), to_matrix(x, "images"), to_matrix(q, "labels"), tau));
      },
      py::arg("weights"), py::arg("images"), py::arg("labels"), py::arg("tau"));

  m.def(
      "classify",
      [](const Array& x, const Array& w) { return learner::classify(to_matrix(x, "images"), to_matrix(w, "weights")); },
      py::arg("images"), py::arg("weights"));

  m.def(
      "read_embeddings", [](const std::filesystem::path& p) { return to_array(io::read_embeddings(p)); },
      py::arg("path"));

  m.def(
      "write_embeddings",
      [](const std::filesystem::path& p, const Array& a, const std::string& dtype) {
        io::DType t;
        if (dtype == "float64") t = io::DType::binary64;
        else if (dtype == "float32") t = io::DType::binary32;
        else raise<UsageError>("dtype must be float32 or float64, got '", dtype, "'");
        io::write_embeddings(p, to_matrix(a, "matrix"), t);
      },
      py::arg("path"), py::arg("matrix"), py::arg("dtype") = "float64");

  m.def("_run_pipeline", &run_pipeline, py::arg("mode"), py::arg("images"), py::arg("kb"),
        py::arg("names") = py::none(), py::arg("labels") = py::none(), py::arg("marginal") = py::none(),
        py::arg("k") = py::none(), py::arg("algorithm") = py::none(), py::arg("tau_ot") = py::none(),
        py::arg("tau_learn") = py::none(), py::arg("learning_rate") = py::none(), py::arg("epochs") = py::none(),
        py::arg("include_timing") = true);

  py::class_<fixture::FixtureFiles>(m, "FixtureFiles")
      .def_readonly("images", &fixture::FixtureFiles::images)
      .def_readonly("labels", &fixture::FixtureFiles::labels)
      .def_readonly("kb", &fixture::FixtureFiles::kb)
      .def_readonly("names", &fixture::FixtureFiles::names)
      .def_readonly("manifest", &fixture::FixtureFiles::manifest);

  m.def("gen_fixture", &gen_fixture, py::arg("out"), py::arg("seed"), py::arg("n") = 300, py::arg("k") = 5,
        py::arg("dim") = 32, "Writes a synthetic dataset with a modality gap into `out`.");
}
