#include "nhic/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace nhic;

PYBIND11_MODULE(_nhic, m) {
    m.doc() = "Singular normally hyperbolic invariant cylinders near a Hamiltonian saddle";

    // message starts with the error kind, e.g. "ConfigInvalid: ..."
    py::register_exception<Error>(m, "NhicError");

    py::class_<HamiltonianModel>(m, "HamiltonianModel")
        .def_static("pendulum", &HamiltonianModel::pendulum)
        .def_static("coupled_pendula", &HamiltonianModel::coupled_pendula, py::arg("coupling") = 0.1)
        .def_static("from_json", &parse_system, py::arg("text"))
        .def_property_readonly("n", &HamiltonianModel::n)
        .def_property_readonly("A", &HamiltonianModel::A)
        .def("H", &HamiltonianModel::H, py::arg("z"))
        .def("gradH", &HamiltonianModel::gradH, py::arg("z"))
        .def("field", &HamiltonianModel::field, py::arg("z"));

    py::class_<SaddleSpectrum>(m, "SaddleSpectrum")
        .def_readonly("lam", &SaddleSpectrum::lambda)
        .def_readonly("xi_plus", &SaddleSpectrum::xi_plus)
        .def_readonly("xi_minus", &SaddleSpectrum::xi_minus)
        .def_readonly("closest_resonance", &SaddleSpectrum::closest_resonance)
        .def_readonly("max_residual", &SaddleSpectrum::max_residual);
    m.def("analyze_saddle", &analyze_saddle, py::arg("model"), py::arg("nonresonance_order") = 8);
    m.def("energy_grid", &energy_grid, py::arg("E0"), py::arg("E_min"), py::arg("ratio"));

    py::class_<CheckResult>(m, "CheckResult")
        .def_readonly("name", &CheckResult::name)
        .def_readonly("value", &CheckResult::value)
        .def_readonly("relation", &CheckResult::relation)
        .def_readonly("passed", &CheckResult::passed)
        .def_readonly("skipped", &CheckResult::skipped)
        .def("__repr__", [](const CheckResult& c) {
            return "<CheckResult " + c.name + (c.skipped ? " SKIP" : c.passed ? " PASS" : " FAIL") + ">";
        });

    py::class_<RunConfig>(m, "RunConfig")
        .def_readwrite("output", &RunConfig::output)
        .def_readwrite("jobs", &RunConfig::jobs)
        .def_readwrite("E0", &RunConfig::E0)
        .def_readwrite("E_min", &RunConfig::E_min)
        .def_readwrite("ratio", &RunConfig::ratio)
        .def_readonly("system_path", &RunConfig::system_path)
        .def_readonly("chain", &RunConfig::chain);
    m.def("load_config", &load_config, py::arg("path"));
    m.def("parse_config", &parse_config, py::arg("text"), py::arg("base_dir") = ".");

    py::class_<Pipeline>(m, "Pipeline")
        .def(py::init<RunConfig, const std::string&, int>(), py::arg("config"), py::arg("out") = "",
             py::arg("jobs") = 0)
        .def(
            "run",
            [](Pipeline& p, const std::string& to, const std::string& from) {
                py::gil_scoped_release release;
                return p.run(stage_from_name(to), stage_from_name(from));
            },
            py::arg("to") = "verify", py::arg("stage_from") = "analyze")
        .def_readonly("out", &Pipeline::out)
        .def_readonly("model", &Pipeline::model)
        .def_readonly("spectrum", &Pipeline::spectrum)
        .def_readonly("checks", &Pipeline::checks)
        .def_readonly("verify_json", &Pipeline::verify_json)
        .def_property_readonly("hole_count", [](const Pipeline& p) { return p.chain.hole_count(); })
        .def_property_readonly("library_labels",
                               [](const Pipeline& p) {
                                   std::vector<std::string> out;
                                   for (const auto& h : p.library) out.push_back(h.label);
                                   return out;
                               })
        .def_property_readonly("family_energies",
                               [](const Pipeline& p) {
                                   py::dict d;
                                   for (const auto& f : p.families) {
                                       std::vector<double> e;
                                       for (const auto& o : f.orbits) e.push_back(o.E);
                                       d[py::str(f.spec.name)] = e;
                                   }
                                   return d;
                               })
        .def("all_passed", &Pipeline::all_passed)
        .def("table", [](const Pipeline& p) { return checks_table(p.checks); });
}
