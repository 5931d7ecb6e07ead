#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rtinv/analysis.hpp"
#include "rtinv/errors.hpp"
#include "rtinv/experiments.hpp"
#include "rtinv/linear.hpp"
#include "rtinv/metrics.hpp"
#include "rtinv/nonlinear.hpp"

namespace py = pybind11;
using namespace rtinv;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(v.size(), v.data()); }

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

MediumKind parse_kind(const std::string& s) {
  if (s == "scattering") return MediumKind::scattering;
  if (s == "absorption") return MediumKind::absorption;
  throw ConfigError("mode must be 'scattering' or 'absorption'");
}

}  // namespace

PYBIND11_MODULE(_rtinv, m) {
  m.doc() = "Radiative transfer forward/adjoint solver and SGD inversion";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<SolverError>(m, "SolverError", base.ptr());

  py::class_<PhaseGrid>(m, "PhaseGrid")
      .def(py::init<int, int>(), py::arg("n_cells"), py::arg("n_angles"))
      .def_property_readonly("cells", &PhaseGrid::cells)
      .def_property_readonly("angles", &PhaseGrid::angle_count)
      .def_property_readonly("node_count", &PhaseGrid::node_count)
      .def_property_readonly("pair_count", &PhaseGrid::pair_count)
      .def_property_readonly("dx", &PhaseGrid::dx)
      .def_property_readonly("inflow_count", [](const PhaseGrid& g) { return g.inflow().size(); })
      .def_property_readonly("outflow_count", [](const PhaseGrid& g) { return g.outflow().size(); })
      .def("volume_weights", [](const PhaseGrid& g) {
        const auto w = g.volume_weights();
        return to_array({w.begin(), w.end()});
      })
      .def("inflow_pairs", [](const PhaseGrid& g) {
        std::vector<std::pair<int, int>> out;
        for (const auto& b : g.inflow()) out.emplace_back(b.node, b.angle);
        return out;
      });

  m.def("two_bump_medium", [](const PhaseGrid& g, const std::string& mode) {
    return to_array(two_bump_medium(g, parse_kind(mode)).values);
  }, py::arg("grid"), py::arg("mode") = "scattering");

  m.def("delta_inflow", [](const PhaseGrid& g, int node, int angle) {
    return to_array(delta_inflow(g, {node, angle}).values);
  }, py::arg("grid"), py::arg("node"), py::arg("angle"));

  m.def("measure", [](const PhaseGrid& g, py::array_t<double> sigma, py::array_t<double> inflow,
                      const std::string& mode, double tolerance) {
    const RteSolver solver(g, SolverOptions{tolerance, 1000, Acceleration::krylov, 60});
    const Medium med{parse_kind(mode), from_array(sigma)};
    BoundaryFlux phi{BoundarySide::inflow, from_array(inflow)};
    if (med.values.size() != static_cast<std::size_t>(g.node_count()) || phi.values.size() != g.inflow().size()) {
      throw ConfigError("sigma or inflow does not match the grid");
    }
    return to_array(solver.measure(solver.forward(med, phi)).values);
  }, py::arg("grid"), py::arg("sigma"), py::arg("inflow"), py::arg("mode") = "scattering",
     py::arg("tolerance") = 1e-12, "Outflow (n.v) f on Gamma+ for the given medium and inflow.");

  m.def("gradient", [](const PhaseGrid& g, py::array_t<double> sigma, py::array_t<double> inflow,
                       py::array_t<double> psi, double alpha, const std::string& mode) {
    const RteSolver solver(g);
    const Medium med{parse_kind(mode), from_array(sigma)};
    ExperimentPair e;
    e.inflow = {BoundarySide::inflow, from_array(inflow)};
    e.measurement = {BoundarySide::outflow, from_array(psi)};
    const auto r = frechet_gradient(solver, med, e, {alpha, med.kind});
    return py::make_tuple(to_array(r.gradient.values), r.cost);
  }, py::arg("grid"), py::arg("sigma"), py::arg("inflow"), py::arg("psi"), py::arg("alpha") = 1.0,
     py::arg("mode") = "scattering", "(gradient, cost) of one experiment's objective.");

  m.def("relative_error", [](const PhaseGrid& g, py::array_t<double> sigma, py::array_t<double> truth, bool weighted) {
    const auto s = from_array(sigma), t = from_array(truth);
    return relative_error(g, s, t, weighted);
  }, py::arg("grid"), py::arg("sigma"), py::arg("truth"), py::arg("weighted") = true);

  m.def("profile_names", &profile_names);
  m.def("resolve_config", [](const std::string& text, const std::string& profile) {
    return config_to_json(load_config(text, profile));
  }, py::arg("config") = "{}", py::arg("profile") = "", "Fully resolved config JSON.");

  auto command = [](CommandResult (*fn)(const RunConfig&, const std::filesystem::path&)) {
    return [fn](const std::string& config, const std::filesystem::path& out, const std::string& profile) {
      const RunConfig cfg = load_config(config, profile);
      CommandResult r;
      {
        py::gil_scoped_release release;
        r = fn(cfg, out);
      }
      return py::make_tuple(r.exit_code, r.summary);
    };
  };
  const auto args = std::make_tuple(py::arg("config"), py::arg("out"), py::arg("profile") = "");
  m.def("generate_data", command(&generate_data_command), std::get<0>(args), std::get<1>(args), std::get<2>(args));
  m.def("invert", command(&invert_command), std::get<0>(args), std::get<1>(args), std::get<2>(args));
  m.def("assemble_linear", command(&assemble_linear_command), std::get<0>(args), std::get<1>(args),
        std::get<2>(args));
  m.def("spectral_report", command(&spectral_report_command), std::get<0>(args), std::get<1>(args),
        std::get<2>(args));
  m.def("cost_table", command(&cost_table_command), std::get<0>(args), std::get<1>(args), std::get<2>(args));
}
