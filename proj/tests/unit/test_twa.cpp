#include <cmath>
#include <complex>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "pomega/twa.hpp"

using namespace pomega;
namespace fs = std::filesystem;

namespace {

ModelParams small(int N = 16) {
  ModelParams p;
  p.N = N;
  p.L = 3.6 * N;
  p.dt = 0.2;
  p.pump_width = 20.0;
  return p;
}

double norm2(const CondensateState& s) {
  double acc = 0.0;
  for (auto z : s.psi) acc += std::norm(z);
  return acc;
}

}  // namespace

TEST_SUITE("twa") {
  TEST_CASE("parameter validation") {
    ModelParams p = small();
    CHECK_NOTHROW(p.validate());
    p.N = 15;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = small();
    p.gamma_c = -1.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = small();
    p.dt = 2.0 * p.max_stable_dt();
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = small();
    const double kmax = M_PI / p.dx();
    CHECK(p.max_stable_dt() == doctest::Approx(0.4 / (p.kinetic_coeff() * kmax * kmax)));
    CHECK(p.homogeneous_threshold() == doctest::Approx(4.0));
  }

  TEST_CASE("pump profile") {
    ModelParams p = small();
    const auto P = pump_profile(p);
    REQUIRE(P.size() == 256u);
    CHECK(P[8 * 16 + 8] == doctest::Approx(p.P0));
    CHECK(P[0] < P[8 * 16 + 8]);
    p.pump_shape = PumpShape::uniform;
    for (double v : pump_profile(p)) CHECK(v == doctest::Approx(p.P0));
  }

  TEST_CASE("reservoir-only steady state") {
    ModelParams p = small(8);
    p.pump_shape = PumpShape::uniform;
    p.P0 = 2.0;  // below threshold: psi stays zero without noise
    p.noise = false;
    p.renormalize = false;
    const auto plain = reservoir_steady(p, false);
    CHECK(plain[0] == doctest::Approx(p.P0 / p.gamma_r).epsilon(1e-12));
    const auto ren = reservoir_steady(p, true);
    CHECK(ren[0] == doctest::Approx(p.P0 / (p.gamma_r - p.R_r / p.dV())).epsilon(1e-12));

    Simulator sim(p);
    numerics::Rng rng(1);
    auto s = CondensateState::zeros(p.N);
    sim.advance(s, rng, 100.0);
    for (double n : s.n_res) CHECK(n == doctest::Approx(p.P0 / p.gamma_r).epsilon(1e-10));
  }

  TEST_CASE("conservative limit conserves the norm") {
    ModelParams p = small();
    p.gamma_c = p.gamma_r = p.R_r = p.P0 = 0.0;
    p.noise = false;
    p.renormalize = false;
    p.dt = 0.02;
    Simulator sim(p);
    numerics::Rng rng(2);
    auto s = CondensateState::zeros(p.N);
    const auto z = oracle::complex_normals(s.psi.size(), 0.5, 9);
    for (std::size_t i = 0; i < z.size(); ++i) s.psi[i] = z[i];
    const double n0 = norm2(s);
    for (int i = 0; i < 100; ++i) sim.step(s, rng);
    CHECK(std::abs(norm2(s) / n0 - 1.0) < 1e-8);
    CHECK(s.t == doctest::Approx(100 * p.dt));
  }

  TEST_CASE("plane wave picks up the kinetic and interaction phase") {
    ModelParams p = small();
    p.gamma_c = p.gamma_r = p.R_r = p.P0 = 0.0;
    p.noise = false;
    p.renormalize = false;
    Simulator sim(p);
    numerics::Rng rng(3);
    auto s = CondensateState::zeros(p.N);
    const double amp = 0.4, k = 2.0 * M_PI * 2.0 / p.L;
    for (int i = 0; i < p.N; ++i)
      for (int j = 0; j < p.N; ++j) s.psi[i * p.N + j] = std::polar(amp, k * j * p.dx());
    const double T = 10.0;
    sim.advance(s, rng, T);
    const double w = p.kinetic_coeff() * k * k + p.g_c * amp * amp / p.hbar;
    const cplx want = std::polar(amp, -w * T);
    CHECK(std::abs(s.psi[0] - want) < 1e-6);
  }

  TEST_CASE("non-finite fields are reported") {
    ModelParams p = small();
    Simulator sim(p);
    numerics::Rng rng(4);
    auto s = CondensateState::zeros(p.N);
    s.psi[5] = cplx(std::nan(""), 0.0);
    CHECK_THROWS_AS(sim.step(s, rng), NumericalInstability);
  }

  TEST_CASE("mode index and amplitude") {
    ModelParams p = small();
    CHECK(mode_index(p, 0.0, 0.0).mx == 0);
    const auto m = mode_index(p, 2.0 * M_PI * 3.0 / p.L, -2.0 * M_PI / p.L);
    CHECK(m.mx == 3);
    CHECK(m.my == -1);
    CHECK_THROWS_AS(mode_index(p, 0.123, 0.0), std::invalid_argument);

    auto s = CondensateState::zeros(p.N);
    for (auto& z : s.psi) z = cplx(0.3, -0.1);
    CHECK(std::abs(mode_amplitude(s, p) - cplx(0.3, -0.1) * p.L) < 1e-12);
    CHECK(std::abs(mode_amplitude(s, p, {1, 0})) < 1e-12);
  }

  TEST_CASE("mode statistics of coherent and thermal samples") {
    // Wigner samples: vacuum half quantum on top of the occupation
    auto coh = oracle::complex_normals(200000, 0.25, 11);
    for (auto& z : coh) z += cplx(3.0, 0.0);
    const auto c = mode_stats(coh);
    CHECK(c.n_mean == doctest::Approx(9.0).epsilon(0.01));
    CHECK(c.n_var == doctest::Approx(9.0).epsilon(0.05));
    CHECK(c.coherence_proxy > 0.95);
    CHECK(c.mean_field_sq == doctest::Approx(9.0).epsilon(0.01));

    const double n = 4.0;
    const auto th = oracle::complex_normals(200000, 0.5 * (n + 0.5), 12);
    const auto t = mode_stats(th);
    CHECK(t.n_mean == doctest::Approx(n).epsilon(0.02));
    CHECK(t.n_var == doctest::Approx(n * n + n).epsilon(0.05));
    CHECK(t.coherence_proxy < 0.2);
    CHECK_THROWS_AS(mode_stats({cplx(1, 0)}), std::invalid_argument);
  }

  TEST_CASE("ensembles are deterministic and thread invariant") {
    const ModelParams p = small();
    Simulator sim(p);
    auto a = vacuum_ensemble(p, 4, 7);
    auto b = vacuum_ensemble(p, 4, 7);
    evolve(a, sim, 10.0, 1);
    evolve(b, sim, 10.0, 3);
    for (std::size_t j = 0; j < 4; ++j) CHECK(a.states[j].psi == b.states[j].psi);
    auto c = vacuum_ensemble(p, 4, 8);
    evolve(c, sim, 10.0, 1);
    CHECK(a.states[0].psi != c.states[0].psi);
  }

  TEST_CASE("checkpoint round trip resumes identically") {
    const ModelParams p = small();
    Simulator sim(p);
    auto a = vacuum_ensemble(p, 3, 21);
    evolve(a, sim, 4.0, 1);
    const auto stem = fs::temp_directory_path() / "pomega_ckpt_test";
    write_checkpoint(a, stem);
    auto b = read_checkpoint(stem);
    REQUIRE(b.size() == 3u);
    CHECK(b.master_seed == 21u);
    evolve(a, sim, 4.0, 1);
    evolve(b, sim, 4.0, 1);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(a.states[j].psi == b.states[j].psi);
      CHECK(a.states[j].n_res == b.states[j].n_res);
    }
  }

  TEST_CASE("params json") {
    ModelParams p = small();
    p.g_c = 0.012;
    p.pump_shape = PumpShape::uniform;
    p.noise = false;
    const auto q = params_from_json(params_to_json(p));
    CHECK(q.g_c == p.g_c);
    CHECK(q.N == p.N);
    CHECK(q.pump_shape == PumpShape::uniform);
    CHECK_FALSE(q.noise);
    CHECK_THROWS_AS(params_from_json(R"({"gamma_x": 1})"), std::invalid_argument);
    CHECK(params_from_json(R"({"P0": 5})").P0 == 5.0);
  }

  TEST_CASE("effective potential diagnostic") {
    ModelParams p;
    const double Pstar = p.P0 * p.R_r / (p.gamma_c * p.gamma_r);
    CHECK(effective_potential_diagnostic(p) ==
          doctest::Approx(p.g_c * (1.0 - Pstar * p.g_r * p.gamma_c / (p.g_c * p.gamma_r))));
  }

  TEST_CASE("preparation matches a coherent target") {
    ModelParams p = small();
    p.P0 = 8.0;
    InitPrepTarget tg;
    tg.n_mean = 20.0;
    tg.n_var = 26.0;
    tg.coherence = std::sqrt(20.0 * 20.0 + 20.0 - 26.0) / 20.0;
    PrepOptions po;
    po.M = 400;
    po.envelope_time = 300.0;
    const auto prep = prepare_initial_state(tg, p, po);
    CHECK(prep.residual <= po.tol);
    const auto st = mode_stats(prep.ensemble.mode_samples());
    CHECK(st.n_mean == doctest::Approx(20.0).epsilon(0.011));
    CHECK(st.n_var == doctest::Approx(26.0).epsilon(0.011));
    CHECK(prep.ensemble.size() == 400u);

    InitPrepTarget bad = tg;
    bad.n_var = 0.5 * bad.n_mean;
    CHECK_THROWS_AS(prepare_initial_state(bad, p, po), std::invalid_argument);
  }

  TEST_CASE("referenced phase variance starts at zero") {
    ModelParams p = small();
    p.P0 = 8.0;
    auto ens = vacuum_ensemble(p, 20, 5);
    for (auto& s : ens.states)
      for (auto& z : s.psi) z += cplx(0.0, 1.0);
    Simulator sim(p);
    const auto series = phase_variance_series(ens, sim, {}, {0.0, 5.0, 10.0});
    REQUIRE(series.size() == 3u);
    CHECK(series.values[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(series.values[2] > 0.0);
    CHECK_THROWS_AS(phase_variance_series(ens, sim, {}, {5.0, 1.0}), std::invalid_argument);
  }

  TEST_CASE("series file round trip") {
    DecaySeries s;
    s.times = {0, 50, 100};
    s.values = {0.01, 0.2, 0.31};
    s.stderrs = {0.001, 0.01, 0.02};
    s.weights = {100, 100, 100};
    const auto path = fs::temp_directory_path() / "pomega_series_test.csv";
    write_series(s, path);
    const auto r = read_series(path);
    CHECK(r.times == s.times);
    CHECK(r.values == s.values);
    CHECK(r.stderrs == s.stderrs);
  }
}
