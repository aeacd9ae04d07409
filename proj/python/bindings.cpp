#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fvi/experiments.hpp"

namespace py = pybind11;
using namespace fvi;

namespace {

IntegratorSpec make_spec(const std::string& family, double alpha, int stages,
                         const std::string& mode, double newton_tol) {
  IntegratorSpec spec;
  if (family == "alpha") {
    spec.family = Family::Alpha;
  } else if (family == "lobatto") {
    spec.family = Family::Lobatto;
  } else {
    throw ConfigError("family", "must be alpha or lobatto");
  }
  spec.alpha = alpha;
  spec.stages = stages;
  if (mode == "doubled") {
    spec.mode = RunMode::Doubled;
  } else if (mode == "identity") {
    spec.mode = RunMode::Identity;
  } else {
    throw ConfigError("mode", "must be doubled or identity");
  }
  spec.solver.newton_tol = newton_tol;
  return spec;
}

py::dict record_to_dict(const TrajectoryRecord& rec) {
  py::dict out;
  out["t"] = rec.t;
  out["q"] = rec.q;
  out["p"] = rec.p;
  out["energy"] = rec.energy;
  out["identity_defect"] = rec.identity_defect;
  out["newton_iters"] = rec.newton_iters;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Variational integrators for forced Lagrangian systems built by "
      "duplication of variables.";

  py::class_<Benchmark>(m, "Benchmark")
      .def_readonly("name", &Benchmark::name)
      .def_readonly("t_end", &Benchmark::t_end)
      .def_property_readonly("q0",
                             [](const Benchmark& b) { return b.initial.q; })
      .def_property_readonly("v0",
                             [](const Benchmark& b) { return b.initial.v; })
      .def_property_readonly("dim",
                             [](const Benchmark& b) { return b.system.dim(); });

  m.def("van_der_pol", &benchmark_van_der_pol, py::arg("eps") = 0.5,
        py::arg("rho") = 0.02, py::arg("lam") = 0.8,
        "Two coupled van der Pol oscillators.");
  m.def(
      "damped_linear",
      [](double mass, double damping, double stiffness) {
        return benchmark_damped_linear(mass, damping, stiffness);
      },
      py::arg("mass") = 1.0, py::arg("damping") = 0.2,
      py::arg("stiffness") = 1.0, "Scalar damped harmonic oscillator.");

  m.def(
      "forced_acceleration",
      [](const Benchmark& b, Vec q, Vec v) {
        return forced_el_acceleration(b.system, {std::move(q), std::move(v)});
      },
      py::arg("benchmark"), py::arg("q"), py::arg("v"));
  m.def(
      "legendre",
      [](const Benchmark& b, Vec q, Vec v) {
        return legendre(b.system, {std::move(q), std::move(v)}).p;
      },
      py::arg("benchmark"), py::arg("q"), py::arg("v"));
  m.def(
      "energy",
      [](const Benchmark& b, Vec q, Vec v) {
        return energy(b.system, {std::move(q), std::move(v)});
      },
      py::arg("benchmark"), py::arg("q"), py::arg("v"));
  m.def(
      "generalized_potential",
      [](const Benchmark& b, Vec q, Vec v, Vec Q, Vec V) {
        return generalized_potential_KF(
            b.system, {{std::move(q), std::move(v)}, {std::move(Q), std::move(V)}});
      },
      py::arg("benchmark"), py::arg("q"), py::arg("v"), py::arg("Q"),
      py::arg("V"));
  m.def(
      "doubled_lagrangian",
      [](const Benchmark& b, Vec q, Vec v, Vec Q, Vec V) {
        return doubled_lagrangian(
            b.system, {{std::move(q), std::move(v)}, {std::move(Q), std::move(V)}});
      },
      py::arg("benchmark"), py::arg("q"), py::arg("v"), py::arg("Q"),
      py::arg("V"));

  m.def(
      "simulate",
      [](const Benchmark& b, double h, int steps, const std::string& family,
         double alpha, int stages, const std::string& mode,
         double newton_tol) {
        IntegratorSpec spec = make_spec(family, alpha, stages, mode, newton_tol);
        return record_to_dict(
            run_trajectory(b.system, spec, b.initial, steps, h));
      },
      py::arg("benchmark"), py::arg("h"), py::arg("steps"),
      py::arg("family") = "alpha", py::arg("alpha") = 0.5,
      py::arg("stages") = 3, py::arg("mode") = "doubled",
      py::arg("newton_tol") = 1e-12);

  m.def(
      "reference",
      [](const Benchmark& b, double t_end, double h_ref) {
        return record_to_dict(
            reference_solve(b.system, b.initial, t_end, h_ref));
      },
      py::arg("benchmark"), py::arg("t_end") = 1.0, py::arg("h_ref") = 1e-3);

  m.def(
      "convergence",
      [](const Benchmark& b, const std::string& family, double alpha,
         int stages, double h_min, double h_max, int points) {
        ConvergenceSpec spec;
        spec.benchmark = b;
        spec.integrator = make_spec(family, alpha, stages, "doubled", 1e-12);
        spec.ladder = geometric_ladder({h_min, h_max, points}, b.t_end);
        ConvergenceStudy st = run_convergence(spec);
        py::dict out;
        out["method"] = st.method;
        out["slope"] = st.state_fit.slope;
        out["r2"] = st.state_fit.r2;
        out["retained"] = st.state_fit.retained;
        Vec hs, errs, errEs;
        for (const auto& p : st.points) {
          hs.push_back(p.h);
          errs.push_back(p.err_state);
          errEs.push_back(p.err_energy);
        }
        out["h"] = hs;
        out["err_state"] = errs;
        out["err_energy"] = errEs;
        return out;
      },
      py::arg("benchmark"), py::arg("family") = "alpha",
      py::arg("alpha") = 0.5, py::arg("stages") = 3, py::arg("h_min") = 1e-3,
      py::arg("h_max") = 0.25, py::arg("points") = 8);

  m.def(
      "discrete_forces",
      [](const Benchmark& b, Vec q0, Vec q1, double h,
         const std::string& family, double alpha, int stages) {
        DoubledSystem dsys = make_doubled(b.system);
        std::unique_ptr<DoubledDiscreteLagrangian> ld =
            family == "alpha" ? alpha_rule(dsys, alpha)
                              : lobatto_galerkin(dsys, stages);
        return discrete_forces_from_K(*ld, q0, q1, h);
      },
      py::arg("benchmark"), py::arg("q0"), py::arg("q1"), py::arg("h"),
      py::arg("family") = "alpha", py::arg("alpha") = 0.5,
      py::arg("stages") = 3);

  py::register_exception<Error>(m, "FviError");

  m.attr("__version__") = "0.1.0";
}
