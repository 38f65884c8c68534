#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pomega/analysis.hpp"
#include "pomega/bridge.hpp"
#include "pomega/homodyne.hpp"
#include "pomega/phasespace.hpp"
#include "pomega/tomography.hpp"
#include "pomega/twa.hpp"

namespace py = pybind11;
using namespace pomega;

namespace {

using darray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using carray = py::array_t<cplx, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const darray& a) { return {a.data(), a.data() + a.size()}; }

darray to_array(const std::vector<double>& v) { return darray(static_cast<py::ssize_t>(v.size()), v.data()); }

// values reshaped to (nq, np)
darray field_values(const QuasiProbabilityField& f, bool sigmas) {
  const auto& v = sigmas ? f.sigmas : f.values;
  if (v.empty()) return darray(0);
  darray out({f.grid.nq(), f.grid.np()});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

QuadratureDataset dataset_from(const darray& x, const darray& phi) {
  if (x.size() != phi.size()) throw std::invalid_argument("x and phi differ in length");
  QuadratureDataset d(static_cast<std::size_t>(x.size()));
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = {x.data()[i], numerics::wrap_phase(phi.data()[i])};
  return d;
}

py::dict records_to_dict(const RecordStream& r) {
  std::vector<double> x1, x2, x3, dp;
  std::vector<std::int64_t> t;
  for (const auto& m : r) {
    t.push_back(m.t_index);
    x1.push_back(m.X1);
    x2.push_back(m.X2);
    x3.push_back(m.X3);
    dp.push_back(m.dphi);
  }
  py::dict d;
  d["t_index"] = py::array_t<std::int64_t>(static_cast<py::ssize_t>(t.size()), t.data());
  d["X1"] = to_array(x1);
  d["X2"] = to_array(x2);
  d["X3"] = to_array(x3);
  d["dphi"] = to_array(dp);
  return d;
}

RecordStream records_from_dict(const py::dict& d) {
  const auto x1 = d["X1"].cast<darray>(), x2 = d["X2"].cast<darray>(), x3 = d["X3"].cast<darray>(),
             dp = d["dphi"].cast<darray>();
  const auto n = static_cast<std::size_t>(x1.size());
  if (static_cast<std::size_t>(x2.size()) != n || static_cast<std::size_t>(x3.size()) != n ||
      static_cast<std::size_t>(dp.size()) != n)
    throw std::invalid_argument("record channels differ in length");
  RecordStream r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = {static_cast<std::int64_t>(i), x1.data()[i], x2.data()[i], x3.data()[i], dp.data()[i]};
  return r;
}

py::dict fit_to_dict(const FitResult& f) {
  py::dict d;
  d["model"] = to_string(f.model);
  d["params"] = f.params;
  d["stderrs"] = f.stderrs;
  d["tau"] = f.tau();
  d["tau_err"] = f.stderrs.empty() ? std::nan("") : f.tau_err();
  d["residual_norm"] = f.residual_norm;
  return d;
}

DecaySeries series_from(const darray& t, const darray& v, const std::optional<darray>& w) {
  DecaySeries s;
  s.times = to_vec(t);
  s.values = to_vec(v);
  if (w) s.weights = to_vec(*w);
  return s;
}

}  // namespace

PYBIND11_MODULE(_pomega, m) {
  m.doc() = "Regularized P-function tomography, homodyne postselection and TWA polariton simulation";

  py::register_exception<ConvergenceError>(m, "ConvergenceError");
  py::register_exception<DegenerateFitError>(m, "DegenerateFitError", PyExc_ValueError);
  py::register_exception<NumericalInstability>(m, "NumericalInstability");

  // --- kernels ---
  m.def("kernel_omega", [](cplx g, double R) { return kernel_omega(g, FilterParam{R}); }, py::arg("gamma"),
        py::arg("R") = kDefaultFilterR);
  m.def("kernel_g", &kernel_g, py::arg("t"));
  m.def("kernel_h", [](double X, double R, int d) { return kernel_h(X, FilterParam{R}, d); }, py::arg("X"),
        py::arg("R") = kDefaultFilterR, py::arg("derivative") = 0);
  m.def("pattern_function", [](cplx a, double x, double phi, double R) { return pattern_function(a, x, phi, FilterParam{R}); },
        py::arg("alpha"), py::arg("x"), py::arg("phi"), py::arg("R") = kDefaultFilterR);

  // --- grids and fields ---
  py::class_<PhaseSpaceGrid>(m, "PhaseSpaceGrid")
      .def(py::init<>())
      .def(py::init<double, double, double, double, double>(), py::arg("q_min"), py::arg("q_max"), py::arg("p_min"),
           py::arg("p_max"), py::arg("step"))
      .def_static("square", &PhaseSpaceGrid::square, py::arg("half_width"), py::arg("step"))
      .def_property_readonly("nq", &PhaseSpaceGrid::nq)
      .def_property_readonly("np", &PhaseSpaceGrid::np)
      .def_property_readonly("step", &PhaseSpaceGrid::step)
      .def("q_axis",
           [](const PhaseSpaceGrid& g) {
             std::vector<double> v;
             for (std::size_t i = 0; i < g.nq(); ++i) v.push_back(g.q(i));
             return to_array(v);
           })
      .def("p_axis", [](const PhaseSpaceGrid& g) {
        std::vector<double> v;
        for (std::size_t j = 0; j < g.np(); ++j) v.push_back(g.p(j));
        return to_array(v);
      });

  py::class_<CircularStats>(m, "CircularStats")
      .def_readonly("resultant", &CircularStats::resultant)
      .def_readonly("variance", &CircularStats::variance)
      .def_readonly("variance_err", &CircularStats::variance_err)
      .def_readonly("mean_amplitude", &CircularStats::mean_amplitude)
      .def_readonly("mean_amplitude_err", &CircularStats::mean_amplitude_err);

  py::class_<QuasiProbabilityField>(m, "Field")
      .def_readonly("grid", &QuasiProbabilityField::grid)
      .def_property_readonly("values", [](const QuasiProbabilityField& f) { return field_values(f, false); })
      .def_property_readonly("sigmas", [](const QuasiProbabilityField& f) { return field_values(f, true); })
      .def("normalization", &QuasiProbabilityField::normalization)
      .def("circular_stats", [](const QuasiProbabilityField& f) { return circular_stats(f); })
      .def("save", [](const QuasiProbabilityField& f, const std::filesystem::path& stem) { write_field(f, stem); });

  m.def("omega_field", [](const PhaseSpaceGrid& g, double R, cplx c) { return omega_field(g, FilterParam{R}, c); },
        py::arg("grid"), py::arg("R") = kDefaultFilterR, py::arg("center") = cplx{});
  m.def("phase_smear", &phase_smear, py::arg("field"), py::arg("kappa"), py::arg("n_phi") = 256);

  // --- tomography ---
  m.def(
      "synth_quadratures",
      [](const std::string& state, cplx alpha, double nbar, double kappa, std::size_t n, std::uint64_t seed) {
        StateSpec s;
        if (state == "vacuum") s = StateSpec::vacuum();
        else if (state == "coherent") s = StateSpec::coherent(alpha);
        else if (state == "thermal") s = StateSpec::thermal(nbar);
        else if (state == "displaced_thermal") s = StateSpec::displaced_thermal(alpha, nbar);
        else if (state == "phase_diffused") s = StateSpec::phase_diffused(alpha, nbar, kappa);
        else throw std::invalid_argument("unknown state '" + state + "'");
        const auto d = synth_quadratures(s, n, seed);
        std::vector<double> x(d.size()), phi(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
          x[i] = d[i].x;
          phi[i] = d[i].phi;
        }
        return py::make_tuple(to_array(x), to_array(phi));
      },
      py::arg("state"), py::arg("alpha") = cplx{}, py::arg("nbar") = 0.0, py::arg("kappa") = 0.0,
      py::arg("n") = 100000, py::arg("seed") = 1);

  m.def(
      "reconstruct",
      [](const darray& x, const darray& phi, const PhaseSpaceGrid& grid, double R, int jobs) {
        EstimateOptions o;
        o.jobs = jobs;
        return estimate_field(bin_dataset(dataset_from(x, phi)), grid, FilterParam{R}, o);
      },
      py::arg("x"), py::arg("phi"), py::arg("grid") = PhaseSpaceGrid{}, py::arg("R") = kDefaultFilterR,
      py::arg("jobs") = 0, "P_Omega from quadrature samples (x, phi) by the binned pattern-function estimator");

  // --- homodyne ---
  m.def(
      "synth_records",
      [](cplx alpha, std::size_t n, std::uint64_t seed, double delay, double diffusion) {
        RecordDynamics dyn;
        dyn.delay_ps = delay;
        dyn.phase_diffusion = diffusion;
        return records_to_dict(synth_records(StateSpec::coherent(alpha), n, seed, dyn));
      },
      py::arg("alpha"), py::arg("n"), py::arg("seed") = 1, py::arg("delay_ps") = 0.0, py::arg("phase_diffusion") = 0.0);
  m.def(
      "postselect",
      [](const py::dict& rec, double s, double w) {
        const auto r = postselect(records_from_dict(rec), {s, w});
        std::vector<double> x(r.data.size()), phi(r.data.size());
        for (std::size_t i = 0; i < r.data.size(); ++i) {
          x[i] = r.data[i].x;
          phi[i] = r.data[i].phi;
        }
        return py::make_tuple(to_array(x), to_array(phi));
      },
      py::arg("records"), py::arg("s"), py::arg("w") = 0.6, "(x, phi) of the target channel for records in the annulus");

  // --- analysis ---
  m.def(
      "fit_decay",
      [](const darray& t, const darray& v, const std::string& model, std::optional<darray> w) {
        FitOptions o;
        o.weighted = w.has_value();
        return fit_to_dict(fit_decay(series_from(t, v, w), parse_decay_model(model), o));
      },
      py::arg("times"), py::arg("values"), py::arg("model") = "exponential", py::arg("weights") = py::none());
  m.def(
      "compare_models",
      [](const darray& t, const darray& v, std::optional<darray> w) {
        FitOptions o;
        o.weighted = w.has_value();
        py::list out;
        for (const auto& f : compare_models(series_from(t, v, w), o).ranked) out.append(fit_to_dict(f));
        return out;
      },
      py::arg("times"), py::arg("values"), py::arg("weights") = py::none());
  m.def("circular_stats_from_phases", [](const darray& p) { return circular_stats_from_phases(to_vec(p)); });

  // --- bridge ---
  m.def("k_reduced", [](double r, double R) { return k_reduced(r, FilterParam{R}); }, py::arg("r"),
        py::arg("R") = kDefaultFilterR);
  m.def(
      "convolve_samples",
      [](const carray& z, const PhaseSpaceGrid& grid, double R, double r_max, int jobs) {
        const auto table = k_table_reduced(FilterParam{R}, r_max);
        return convolve_samples({z.data(), z.data() + z.size()}, table, grid, jobs);
      },
      py::arg("samples"), py::arg("grid"), py::arg("R") = kDefaultFilterR, py::arg("r_max") = 20.0,
      py::arg("jobs") = 0, "P_Omega from Wigner samples of a mode amplitude");

  // --- twa ---
  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init<>())
      .def_readwrite("m_eff", &ModelParams::m_eff)
      .def_readwrite("gamma_c", &ModelParams::gamma_c)
      .def_readwrite("gamma_r", &ModelParams::gamma_r)
      .def_readwrite("R_r", &ModelParams::R_r)
      .def_readwrite("g_c", &ModelParams::g_c)
      .def_readwrite("g_r", &ModelParams::g_r)
      .def_readwrite("P0", &ModelParams::P0)
      .def_readwrite("pump_width", &ModelParams::pump_width)
      .def_readwrite("L", &ModelParams::L)
      .def_readwrite("N", &ModelParams::N)
      .def_readwrite("dt", &ModelParams::dt)
      .def_readwrite("noise", &ModelParams::noise)
      .def_readwrite("renormalize", &ModelParams::renormalize)
      .def("validate", &ModelParams::validate)
      .def("max_stable_dt", &ModelParams::max_stable_dt)
      .def("homogeneous_threshold", &ModelParams::homogeneous_threshold);

  py::class_<ModeStats>(m, "ModeStats")
      .def_readonly("n_mean", &ModeStats::n_mean)
      .def_readonly("n_var", &ModeStats::n_var)
      .def_readonly("n_coh", &ModeStats::n_coh)
      .def_readonly("n_th", &ModeStats::n_th)
      .def_readonly("coherence_proxy", &ModeStats::coherence_proxy)
      .def_property_readonly("phase_samples", [](const ModeStats& s) { return to_array(s.phase_samples); });
  m.def("mode_stats", [](const carray& z) { return mode_stats({z.data(), z.data() + z.size()}); });

  m.def(
      "simulate_mode",
      [](const ModelParams& p, std::size_t M, std::uint64_t seed, const darray& times, int jobs) {
        const auto t = to_vec(times);
        std::vector<cplx> buf;
        {
          py::gil_scoped_release release;
          auto ens = vacuum_ensemble(p, M, seed);
          Simulator sim(p);
          double now = 0.0;
          for (double tq : t) {
            if (tq < now) throw std::invalid_argument("times must be increasing");
            evolve(ens, sim, tq - now, jobs);
            now = tq;
            const auto s = ens.mode_samples();
            buf.insert(buf.end(), s.begin(), s.end());
          }
        }
        carray out({t.size(), M});
        std::copy(buf.begin(), buf.end(), out.mutable_data());
        return out;
      },
      py::arg("params"), py::arg("M"), py::arg("seed") = 1, py::arg("times"), py::arg("jobs") = 0,
      "k = 0 mode amplitudes of M trajectories started from vacuum, shape (len(times), M)");
}
