#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <vector>

#include "ksl/cli.hpp"
#include "ksl/collision_ops.hpp"
#include "ksl/fluid_limits.hpp"
#include "ksl/velocity_basis.hpp"

namespace py = pybind11;

namespace {

py::tuple kernel_degrees_py(double r, double rs, int lmax) {
    std::vector<double> k(static_cast<std::size_t>(lmax) + 1), k1(k.size());
    ksl::kernel_degrees(r, rs, lmax, k.data(), k1.data());
    return py::make_tuple(k, k1);
}

py::list evaluate_criteria_py(const std::string& results) {
    py::list out;
    for (const auto& c : ksl::evaluate_criteria(nlohmann::json::parse(results))) {
        py::dict d;
        d["id"] = c.id;
        d["name"] = c.name;
        d["status"] = c.status;
        d["detail"] = c.detail;
        out.append(d);
    }
    return out;
}

ksl::DecayCurve fluid_decay_py(const ksl::TransportCoefficients& tc, const std::string& kind, const std::string& profile,
                               const std::vector<double>& times) {
    ksl::DecayData k;
    if (kind == "y1_generic") k = ksl::DecayData::y1_generic;
    else if (kind == "y2_generic") k = ksl::DecayData::y2_generic;
    else if (kind == "y2_enhanced") k = ksl::DecayData::y2_enhanced;
    else throw py::value_error("unknown decay kind '" + kind + "'");
    return ksl::fluid_decay(tc, k, ksl::fluid_profile(profile), times);
}

}  // namespace

PYBIND11_MODULE(_ksl, m) {
    m.doc() = "Linearized kinetic and fluid mode operators";

    py::class_<ksl::BasisSpec>(m, "BasisSpec")
        .def(py::init<>())
        .def_readwrite("radial_order", &ksl::BasisSpec::radial_order)
        .def_readwrite("angular_max", &ksl::BasisSpec::angular_max)
        .def_readwrite("sectors", &ksl::BasisSpec::sectors)
        .def_readwrite("quad_points", &ksl::BasisSpec::quad_points)
        .def("canonical", &ksl::BasisSpec::canonical);

    py::class_<ksl::Basis>(m, "Basis")
        .def_readonly("spec", &ksl::Basis::spec)
        .def_readonly("gram", &ksl::Basis::gram)
        .def_property_readonly("dim", &ksl::Basis::dim)
        .def("chi", &ksl::Basis::chi, py::arg("j"));
    m.def("build_basis", &ksl::build_basis, py::arg("spec"));

    py::class_<ksl::CollisionOptions>(m, "CollisionOptions")
        .def(py::init<>())
        .def_readwrite("panel", &ksl::CollisionOptions::panel)
        .def_readwrite("per_panel", &ksl::CollisionOptions::per_panel)
        .def_readwrite("with_gamma", &ksl::CollisionOptions::with_gamma);

    py::class_<ksl::CollisionMatrices>(m, "CollisionMatrices")
        .def_readonly("L_l", &ksl::CollisionMatrices::L_l)
        .def_readonly("L1_l", &ksl::CollisionMatrices::L1_l)
        .def_readonly("mu_per_l", &ksl::CollisionMatrices::mu_per_l)
        .def_readonly("mu_estimate", &ksl::CollisionMatrices::mu_estimate)
        .def_readonly("null_residual", &ksl::CollisionMatrices::null_residual)
        .def_readonly("l1_null_residual", &ksl::CollisionMatrices::l1_null_residual)
        .def_readonly("symmetry_defect", &ksl::CollisionMatrices::symmetry_defect);
    m.def("assemble_collision", &ksl::assemble_collision, py::arg("basis"),
          py::arg("options") = ksl::CollisionOptions{}, py::call_guard<py::gil_scoped_release>());

    py::class_<ksl::TransportCoefficients>(m, "TransportCoefficients")
        .def_readonly("kappa0", &ksl::TransportCoefficients::kappa0)
        .def_readonly("kappa1", &ksl::TransportCoefficients::kappa1)
        .def_readonly("eta", &ksl::TransportCoefficients::eta)
        .def_readonly("a", &ksl::TransportCoefficients::a);
    m.def("transport_coefficients", &ksl::transport_coefficients, py::arg("basis"), py::arg("collision"));

    py::class_<ksl::DecayCurve>(m, "DecayCurve")
        .def_readonly("t", &ksl::DecayCurve::t)
        .def_readonly("norm", &ksl::DecayCurve::norm);
    m.def("fluid_decay", &fluid_decay_py, py::arg("transport"), py::arg("kind"), py::arg("profile") = "lorentz2",
          py::arg("times"));

    m.def("nu", &ksl::nu_radial, py::arg("r"));
    m.def("kernel_degrees", &kernel_degrees_py, py::arg("r"), py::arg("rs"), py::arg("lmax"));
    m.def("y2_rates", &ksl::y2_rates, py::arg("s"), py::arg("eta"));
    m.def("format_double", &ksl::format_double, py::arg("value"));
    m.def("evaluate_criteria", &evaluate_criteria_py, py::arg("results_json"));
    m.def("run", [](const std::string& config_path, const std::vector<std::string>& commands) {
              ksl::RunConfig cfg = ksl::load_config(config_path);
              py::gil_scoped_release release;
              return ksl::run_commands(cfg, commands.empty() ? cfg.experiments : commands);
          },
          py::arg("config"), py::arg("commands") = std::vector<std::string>{});
}
