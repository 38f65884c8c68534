#include "pomega/twa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>

#include <boost/random/normal_distribution.hpp>
#include <fftw3.h>
#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "pomega/csv.hpp"

namespace pomega {

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

// plain product without the IEEE special-value handling of operator*
inline cplx mul(cplx a, cplx b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

int lattice_wavenumber(int i, int N) { return i <= N / 2 ? i : i - N; }

}  // namespace

void ModelParams::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("ModelParams: ") + name + " must be > 0");
  };
  const auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("ModelParams: ") + name + " must be >= 0");
  };
  positive(m_eff, "m_eff");
  positive(L, "L");
  positive(dt, "dt");
  positive(hbar, "hbar");
  positive(pump_width, "pump_width");
  nonneg(gamma_c, "gamma_c");
  nonneg(gamma_r, "gamma_r");
  nonneg(R_r, "R_r");
  nonneg(g_c, "g_c");
  nonneg(g_r, "g_r");
  nonneg(P0, "P0");
  if (N < 4 || N % 2 != 0) throw std::invalid_argument("ModelParams: N must be even and >= 4");
  if (dt > max_stable_dt())
    throw std::invalid_argument("ModelParams: dt = " + std::to_string(dt) + " ps exceeds the stability bound " +
                                std::to_string(max_stable_dt()) + " ps");
}

double ModelParams::max_stable_dt() const {
  const double kmax = kPi / dx();
  return 0.4 / (kinetic_coeff() * kmax * kmax);
}

CondensateState CondensateState::zeros(int N) {
  CondensateState s;
  s.N = N;
  s.psi.assign(static_cast<std::size_t>(N) * N, cplx{});
  s.n_res.assign(static_cast<std::size_t>(N) * N, 0.0);
  return s;
}

std::vector<double> pump_profile(const ModelParams& p) {
  const int N = p.N;
  std::vector<double> out(static_cast<std::size_t>(N) * N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const double x = (i - N / 2) * p.dx(), y = (j - N / 2) * p.dx();
      out[static_cast<std::size_t>(i) * N + j] =
          p.pump_shape == PumpShape::uniform ? p.P0 : p.P0 * std::exp(-(x * x + y * y) / (p.pump_width * p.pump_width));
    }
  }
  return out;
}

std::vector<double> reservoir_steady(const ModelParams& p, bool renormalized) {
  const double rate = renormalized ? p.gamma_r - p.R_r / p.dV() : p.gamma_r;
  if (!(rate > 0.0)) throw std::invalid_argument("reservoir_steady: gamma_r <= R_r / dV (unphysical)");
  auto n = pump_profile(p);
  for (auto& v : n) v /= rate;
  return n;
}

// --- simulator -------------------------------------------------------------

struct Simulator::Work {
  std::vector<cplx> fft, k_psi, acc_psi, tmp_psi;
  std::vector<double> k_n, acc_n, tmp_n, stage_n;
  explicit Work(std::size_t n)
      : fft(n), k_psi(n), acc_psi(n), tmp_psi(n), k_n(n), acc_n(n), tmp_n(n), stage_n(n) {}
};

Simulator::Simulator(const ModelParams& params) : p_(params), pump_(pump_profile(params)) {
  p_.validate();
  const int N = p_.N;
  const std::size_t n = static_cast<std::size_t>(N) * N;
  k2_.resize(n);
  const double dk = kTwoPi / p_.L;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const double kx = dk * lattice_wavenumber(i, N), ky = dk * lattice_wavenumber(j, N);
      // includes the 1/N^2 of the unnormalized inverse transform
      k2_[static_cast<std::size_t>(i) * N + j] = p_.kinetic_coeff() * (kx * kx + ky * ky) / static_cast<double>(n);
    }
  std::vector<cplx> buf(n);
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  plan_fwd_ = fftw_plan_dft_2d(N, N, as_fftw(buf.data()), as_fftw(buf.data()), FFTW_FORWARD,
                               FFTW_MEASURE | FFTW_UNALIGNED);
  plan_bwd_ = fftw_plan_dft_2d(N, N, as_fftw(buf.data()), as_fftw(buf.data()), FFTW_BACKWARD,
                               FFTW_MEASURE | FFTW_UNALIGNED);
}

Simulator::~Simulator() {
  std::lock_guard<std::mutex> lock(fftw_planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_bwd_));
}

void Simulator::drift(const std::vector<cplx>& psi, const std::vector<double>& n, std::vector<cplx>& dpsi,
                      std::vector<double>& dn, Work& w) const {
  const std::size_t cells = psi.size();
  std::copy(psi.begin(), psi.end(), w.fft.begin());
  fftw_execute_dft(static_cast<fftw_plan>(plan_fwd_), as_fftw(w.fft.data()), as_fftw(w.fft.data()));
  for (std::size_t i = 0; i < cells; ++i) w.fft[i] *= k2_[i];
  fftw_execute_dft(static_cast<fftw_plan>(plan_bwd_), as_fftw(w.fft.data()), as_fftw(w.fft.data()));
  const double shift = p_.renormalize ? 1.0 / p_.dV() : 0.0;
  const double inv_hbar = 1.0 / p_.hbar;
  for (std::size_t i = 0; i < cells; ++i) {
    const double dens = std::norm(psi[i]) - shift;
    const double pot = (p_.g_r * n[i] + p_.g_c * dens) * inv_hbar;
    const double gain = 0.5 * (p_.R_r * n[i] - p_.gamma_c);
    const cplx kin = w.fft[i];
    const double re = psi[i].real(), im = psi[i].imag();
    dpsi[i] = cplx(kin.imag() + gain * re + pot * im, -kin.real() + gain * im - pot * re);
    dn[i] = -(p_.gamma_r + p_.R_r * dens) * n[i] + pump_[i];
  }
}

void Simulator::step(CondensateState& s, numerics::Rng& rng) const {
  const std::size_t cells = s.psi.size();
  if (s.N != p_.N || cells != static_cast<std::size_t>(p_.N) * p_.N || s.n_res.size() != cells)
    throw std::invalid_argument("Simulator::step: state does not match the model grid");
  thread_local std::unique_ptr<Work> work;
  if (!work || work->fft.size() != cells) work = std::make_unique<Work>(cells);
  Work& w = *work;
  const double dt = p_.dt;

  // noise amplitude uses the start-of-step reservoir
  std::vector<double>& noise_sd = w.tmp_n;
  if (p_.noise) {
    const double scale = dt / (4.0 * p_.dV());
    for (std::size_t i = 0; i < cells; ++i) noise_sd[i] = std::sqrt(std::max(0.0, p_.R_r * s.n_res[i] + p_.gamma_c) * scale);
  }

  static constexpr double kStage[4] = {0.0, 0.5, 0.5, 1.0};
  static constexpr double kWeight[4] = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
  std::copy(s.psi.begin(), s.psi.end(), w.acc_psi.begin());
  std::vector<double>& acc_n = w.acc_n;
  std::vector<double>& stage_n = w.stage_n;
  std::copy(s.n_res.begin(), s.n_res.end(), acc_n.begin());
  for (int st = 0; st < 4; ++st) {
    const std::vector<cplx>* psi_in = &s.psi;
    const std::vector<double>* n_in = &s.n_res;
    if (st > 0) {
      const double h = kStage[st] * dt;
      for (std::size_t i = 0; i < cells; ++i) {
        w.tmp_psi[i] = s.psi[i] + h * w.k_psi[i];
        stage_n[i] = s.n_res[i] + h * w.k_n[i];
      }
      psi_in = &w.tmp_psi;
      n_in = &stage_n;
    }
    drift(*psi_in, *n_in, w.k_psi, w.k_n, w);
    const double c = kWeight[st] * dt;
    for (std::size_t i = 0; i < cells; ++i) {
      w.acc_psi[i] += c * w.k_psi[i];
      acc_n[i] += c * w.k_n[i];
    }
  }
  std::copy(w.acc_psi.begin(), w.acc_psi.end(), s.psi.begin());
  for (std::size_t i = 0; i < cells; ++i) s.n_res[i] = std::max(0.0, acc_n[i]);
  if (p_.noise) {
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < cells; ++i) {
      const double a = normal(rng);
      const double b = normal(rng);
      s.psi[i] += noise_sd[i] * cplx(a, b);
    }
  }
  s.t += dt;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!std::isfinite(s.psi[i].real()) || !std::isfinite(s.psi[i].imag()) || !std::isfinite(s.n_res[i])) {
      std::ostringstream msg;
      msg << "non-finite field at cell (" << i / static_cast<std::size_t>(s.N) << ", "
          << i % static_cast<std::size_t>(s.N) << ") at t = " << s.t << " ps";
      throw NumericalInstability(msg.str());
    }
  }
}

void Simulator::advance(CondensateState& s, numerics::Rng& rng, double duration) const {
  const long steps = std::lround(duration / p_.dt);
  for (long k = 0; k < steps; ++k) step(s, rng);
}

// --- modes -----------------------------------------------------------------

ModeIndex mode_index(const ModelParams& p, double kx, double ky) {
  const double dk = kTwoPi / p.L;
  const double fx = kx / dk, fy = ky / dk;
  const long mx = std::lround(fx), my = std::lround(fy);
  if (std::abs(fx - static_cast<double>(mx)) > 1e-9 * std::max(1.0, std::abs(fx)) ||
      std::abs(fy - static_cast<double>(my)) > 1e-9 * std::max(1.0, std::abs(fy)))
    throw std::invalid_argument("mode_index: wavevector is not on the reciprocal lattice");
  if (std::abs(mx) > p.N / 2 || std::abs(my) > p.N / 2)
    throw std::invalid_argument("mode_index: wavevector beyond the lattice Nyquist limit");
  return {static_cast<int>(mx), static_cast<int>(my)};
}

cplx mode_amplitude(const CondensateState& s, const ModelParams& p, ModeIndex k) {
  const int N = s.N;
  if (std::abs(k.mx) > N / 2 || std::abs(k.my) > N / 2) throw std::invalid_argument("mode_amplitude: off-lattice mode");
  std::vector<cplx> ex(N), ey(N);
  for (int i = 0; i < N; ++i) {
    ex[i] = std::polar(1.0, -kTwoPi * k.mx * i / N);
    ey[i] = std::polar(1.0, -kTwoPi * k.my * i / N);
  }
  cplx sum{};
  for (int i = 0; i < N; ++i) {
    cplx row{};
    for (int j = 0; j < N; ++j) row += mul(s.psi[static_cast<std::size_t>(i) * N + j], ey[j]);
    sum += mul(row, ex[i]);
  }
  return sum * std::sqrt(p.dV()) / static_cast<double>(N);
}

ModeStats mode_stats(const std::vector<cplx>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("mode_stats: need at least 2 samples");
  const double M = static_cast<double>(samples.size());
  double m2 = 0.0, m4 = 0.0;
  cplx mean{};
  ModeStats st;
  st.phase_samples.reserve(samples.size());
  for (const auto& z : samples) {
    const double a = std::norm(z);
    m2 += a;
    m4 += a * a;
    mean += z;
    st.phase_samples.push_back(std::arg(z));
  }
  m2 /= M;
  m4 /= M;
  mean /= M;
  st.n_mean = m2 - 0.5;
  st.n_var = m4 - m2 - st.n_mean * st.n_mean;
  st.n_coh_sq = 2.0 * m2 * m2 - m4;
  // delta-method error of 2 m2^2 - m4
  double sy = 0.0, syy = 0.0;
  for (const auto& z : samples) {
    const double a = std::norm(z);
    const double y = 4.0 * m2 * a - a * a;
    sy += y;
    syy += y * y;
  }
  st.n_coh_sq_err = std::sqrt(std::max(0.0, (syy / M - (sy / M) * (sy / M)) / (M - 1.0)));
  const double n = st.n_mean;
  if (n > 0.0 && st.n_coh_sq > 2.0 * st.n_coh_sq_err) st.n_coh = std::min(n, std::sqrt(st.n_coh_sq));
  st.n_th = n - st.n_coh;
  st.coherence_proxy = n > 0.0 ? st.n_coh / n : 0.0;
  st.mean_field_sq = std::norm(mean);
  return st;
}

std::vector<cplx> TrajectoryEnsemble::mode_samples(ModeIndex k) const {
  std::vector<cplx> out(states.size());
  for (std::size_t j = 0; j < states.size(); ++j) out[j] = mode_amplitude(states[j], params, k);
  return out;
}

void evolve(TrajectoryEnsemble& ens, const Simulator& sim, double duration, int jobs) {
  numerics::parallel_for(ens.size(), jobs, [&](std::size_t j) {
    try {
      sim.advance(ens.states[j], ens.rngs[j], duration);
    } catch (const NumericalInstability& e) {
      throw NumericalInstability("trajectory " + std::to_string(j) + ": " + e.what());
    }
  });
}

TrajectoryEnsemble vacuum_ensemble(const ModelParams& p, std::size_t M, std::uint64_t seed) {
  if (M < 1) throw std::invalid_argument("vacuum_ensemble: M must be >= 1");
  TrajectoryEnsemble ens;
  ens.params = p;
  ens.master_seed = seed;
  const auto n0 = reservoir_steady(p, p.renormalize);
  for (std::size_t j = 0; j < M; ++j) {
    auto s = CondensateState::zeros(p.N);
    s.n_res = n0;
    ens.states.push_back(std::move(s));
    ens.rngs.emplace_back(numerics::derive_seed(seed, j));
  }
  return ens;
}

InitPrepTarget steady_state_target(const ModelParams& p, std::size_t M, std::uint64_t seed, double t_relax,
                                   ModeIndex k, int jobs, double window, double cadence) {
  if (M < 2) throw std::invalid_argument("steady_state_target: M must be >= 2");
  if (window < 0.0 || !(cadence > 0.0)) throw std::invalid_argument("steady_state_target: bad sampling window");
  auto ens = vacuum_ensemble(p, M, seed);
  Simulator sim(p);
  evolve(ens, sim, t_relax, jobs);
  auto pooled = ens.mode_samples(k);
  const long snaps = std::lround(window / cadence);
  for (long q = 0; q < snaps; ++q) {
    evolve(ens, sim, cadence, jobs);
    const auto more = ens.mode_samples(k);
    pooled.insert(pooled.end(), more.begin(), more.end());
  }
  const auto st = mode_stats(pooled);
  return {st.n_mean, st.n_var, st.coherence_proxy, k};
}

std::vector<double> mean_field_envelope(const ModelParams& p, double t_relax) {
  ModelParams mf = p;
  mf.noise = false;
  mf.renormalize = false;
  Simulator sim(mf);
  auto s = CondensateState::zeros(p.N);
  s.n_res = reservoir_steady(mf, false);
  const auto pump = pump_profile(p);
  const double peak = std::max(p.P0, 1e-300);
  for (std::size_t i = 0; i < s.psi.size(); ++i) s.psi[i] = 1e-2 * std::sqrt(pump[i] / peak);
  numerics::Rng rng(0);
  sim.advance(s, rng, t_relax);
  std::vector<double> env(s.psi.size());
  double peak_density = 0.0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    env[i] = std::abs(s.psi[i]);
    peak_density = std::max(peak_density, env[i] * env[i]);
  }
  if (peak_density < 1e-6) {
    spdlog::info("mean_field_envelope: no mean-field condensate, using the pump profile");
    for (std::size_t i = 0; i < env.size(); ++i) env[i] = pump[i] / peak;
  }
  return env;
}

// --- initial state preparation ----------------------------------------------

namespace {

struct MomentMap {
  // psi_k,j = a + sigma * eta_j with standardized eta (mean 0, <|eta|^2> = 1)
  std::vector<cplx> eta;
  cplx S1;  // mode projection of the envelope

  std::pair<double, double> stats(double mu, double sigma) const {
    std::vector<cplx> z(eta.size());
    for (std::size_t j = 0; j < eta.size(); ++j) z[j] = mu * S1 + sigma * eta[j];
    const auto st = mode_stats(z);
    return {st.n_mean, st.n_var};
  }
};

double displaced_thermal_proxy(double n, double var) {
  if (n <= 0.0) return 0.0;
  return std::min(n, std::sqrt(std::max(0.0, n * n + n - var))) / n;
}

}  // namespace

PreparedEnsemble prepare_initial_state(const InitPrepTarget& target, const ModelParams& p, const PrepOptions& opts) {
  p.validate();
  if (!(opts.tol > 0.0)) throw std::invalid_argument("prepare_initial_state: tol must be > 0");
  if (opts.M < 2) throw std::invalid_argument("prepare_initial_state: M must be >= 2");
  if (!(target.n_mean > 0.0) || !(target.n_var >= 0.0))
    throw std::invalid_argument("prepare_initial_state: need n_mean > 0 and n_var >= 0");
  if (target.n_var < target.n_mean * (1.0 - 1e-9))
    throw std::invalid_argument("prepare_initial_state: n_var below the shot-noise floor n_mean");

  const std::size_t M = opts.M;
  const std::size_t cells = static_cast<std::size_t>(p.N) * p.N;
  auto env = mean_field_envelope(p, opts.envelope_time);

  // mean-field reservoir accompanies the envelope
  ModelParams mf = p;
  mf.noise = false;
  mf.renormalize = false;

  CondensateState env_state = CondensateState::zeros(p.N);
  for (std::size_t i = 0; i < cells; ++i) env_state.psi[i] = env[i];
  cplx S1 = mode_amplitude(env_state, p, target.k);
  if (std::abs(S1) < 1e-12) throw std::invalid_argument("prepare_initial_state: envelope has no weight in the mode");
  // normalize so that the envelope's mode amplitude has unit modulus
  const double norm = 1.0 / std::abs(S1);
  for (auto& e : env) e *= norm;
  S1 /= std::abs(S1);

  // one complex draw per trajectory, fixed across iterations and standardized
  // over the ensemble (zero mean, unit mean square)
  MomentMap map;
  map.S1 = S1;
  map.eta.resize(M);
  {
    numerics::Rng rng(numerics::derive_seed(opts.seed, 0x5eedULL));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& e : map.eta) {
      const double a = normal(rng);
      e = cplx(a, normal(rng));
    }
  }
  cplx eta_mean{};
  for (const auto& e : map.eta) eta_mean += e;
  eta_mean /= static_cast<double>(M);
  double eta2 = 0.0;
  for (auto& e : map.eta) {
    e -= eta_mean;
    eta2 += std::norm(e);
  }
  const double eta_scale = 1.0 / std::sqrt(eta2 / static_cast<double>(M));
  for (auto& e : map.eta) e *= eta_scale;

  // closed-form start from the displaced-thermal decomposition
  const double n_t0 = target.n_mean * (1.0 - displaced_thermal_proxy(target.n_mean, target.n_var));
  double mu = std::sqrt(std::max(0.0, target.n_mean - n_t0));
  double sigma = std::sqrt(n_t0 + 0.5);

  const auto residual_of = [&](double m, double s) {
    const auto [n, v] = map.stats(m, s);
    const double rn = std::abs(n - target.n_mean) / target.n_mean;
    const double rv = std::abs(v - target.n_var) / std::max(target.n_var, 1e-12);
    const double rc = std::abs(displaced_thermal_proxy(n, v) - displaced_thermal_proxy(target.n_mean, target.n_var));
    return std::max({rn, rv, rc});
  };
  // damped Newton on (mu, sigma) for the two moment equations
  double best = residual_of(mu, sigma);
  double best_mu = mu, best_sigma = sigma;
  int it = 0;
  for (; it < opts.max_iterations && best > opts.tol; ++it) {
    const auto f = [&](double m, double s) {
      const auto [n, v] = map.stats(m, s);
      return Eigen::Vector2d((n - target.n_mean) / target.n_mean, (v - target.n_var) / std::max(target.n_var, 1e-12));
    };
    const Eigen::Vector2d f0 = f(mu, sigma);
    const double hm = 1e-6 * std::max(1.0, mu), hs = 1e-6 * std::max(1.0, sigma);
    Eigen::Matrix2d J;
    J.col(0) = (f(mu + hm, sigma) - f(mu - hm, sigma)) / (2 * hm);
    J.col(1) = (f(mu, sigma + hs) - f(mu, sigma - hs)) / (2 * hs);
    Eigen::Vector2d d = J.colPivHouseholderQr().solve(-f0);
    if (!d.allFinite()) break;
    double lambda = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls, lambda *= 0.5) {
      const double m = std::max(0.0, mu + lambda * d[0]);
      const double s = std::max(1e-9, sigma + lambda * d[1]);
      if (f(m, s).norm() < f0.norm()) {
        mu = m;
        sigma = s;
        improved = true;
        break;
      }
    }
    const double r = residual_of(mu, sigma);
    if (r < best) {
      best = r;
      best_mu = mu;
      best_sigma = sigma;
    }
    if (!improved) break;
  }
  mu = best_mu;
  sigma = best_sigma;

  // final draw: per-trajectory samples times the envelope
  PreparedEnsemble out;
  out.mu = mu;
  out.sigma = sigma;
  out.iterations = it;
  auto& ens = out.ensemble;
  ens.params = p;
  ens.master_seed = opts.seed;
  const auto n0 = [&] {
    // reservoir from the mean-field run
    Simulator sim(mf);
    auto s = CondensateState::zeros(p.N);
    s.n_res = reservoir_steady(mf, false);
    const auto pump = pump_profile(p);
    const double peak = std::max(p.P0, 1e-300);
    for (std::size_t i = 0; i < cells; ++i) s.psi[i] = 1e-2 * std::sqrt(pump[i] / peak);
    numerics::Rng rng(0);
    sim.advance(s, rng, opts.envelope_time);
    return s.n_res;
  }();
  for (std::size_t j = 0; j < M; ++j) {
    auto s = CondensateState::zeros(p.N);
    const cplx amp = mu + sigma * map.eta[j];
    for (std::size_t i = 0; i < cells; ++i) s.psi[i] = amp * env[i];
    s.n_res = n0;
    ens.states.push_back(std::move(s));
    ens.rngs.emplace_back(numerics::derive_seed(opts.seed, j));
  }
  const auto st = mode_stats(ens.mode_samples(target.k));
  out.residual = std::max({std::abs(st.n_mean - target.n_mean) / target.n_mean,
                           std::abs(st.n_var - target.n_var) / std::max(target.n_var, 1e-12),
                           std::abs(st.coherence_proxy - displaced_thermal_proxy(target.n_mean, target.n_var))});
  if (out.residual > opts.tol)
    throw PreparationError("prepare_initial_state: no convergence, best residual " + std::to_string(out.residual),
                           out.residual, std::make_shared<const PreparedEnsemble>(std::move(out)));
  return out;
}

// --- series ----------------------------------------------------------------

PhaseSpaceGrid auto_grid(const std::vector<cplx>& samples, double margin, std::size_t max_points_per_axis) {
  double rmax = 0.0;
  for (const auto& z : samples) rmax = std::max({rmax, std::abs(z.real()), std::abs(z.imag())});
  const double half = std::ceil(rmax + margin);
  const double step = std::max(0.25, 2.0 * half / static_cast<double>(max_points_per_axis - 1));
  const double h = std::ceil(half / step) * step;
  return PhaseSpaceGrid::square(h, step);
}

DecaySeries phase_variance_series(TrajectoryEnsemble& ens, const Simulator& sim, ModeIndex k,
                                  const std::vector<double>& t_grid, const SeriesOptions& opts) {
  if (t_grid.empty()) throw std::invalid_argument("phase_variance_series: empty time grid");
  for (std::size_t i = 0; i < t_grid.size(); ++i)
    if (t_grid[i] < 0.0 || (i > 0 && !(t_grid[i] > t_grid[i - 1])))
      throw std::invalid_argument("phase_variance_series: t_grid must be increasing and >= 0");
  const std::size_t M = ens.size(), T = t_grid.size();
  std::vector<std::vector<cplx>> rec(T, std::vector<cplx>(M));
  const double dt = sim.params().dt;
  numerics::parallel_for(M, opts.jobs, [&](std::size_t j) {
    long done = 0;
    for (std::size_t q = 0; q < T; ++q) {
      const long target = std::lround(t_grid[q] / dt);
      try {
        for (; done < target; ++done) sim.step(ens.states[j], ens.rngs[j]);
      } catch (const NumericalInstability& e) {
        throw NumericalInstability("trajectory " + std::to_string(j) + ": " + e.what());
      }
      rec[q][j] = mode_amplitude(ens.states[j], ens.params, k);
    }
  });

  if (opts.reference_initial_phase) {
    for (std::size_t j = 0; j < M; ++j) {
      const double a = std::abs(rec[0][j]);
      const cplx rot = a > 0.0 ? std::conj(rec[0][j]) / a : cplx(1.0, 0.0);
      for (std::size_t q = 0; q < T; ++q) rec[q][j] *= rot;
    }
  }
  DecaySeries out;
  out.label = opts.mode == VarianceMode::samples ? "var_phi_samples" : "var_phi_bridge";
  std::unique_ptr<RadialKernelTable> table;
  std::optional<PhaseSpaceGrid> grid;
  if (opts.mode == VarianceMode::bridge) {
    std::vector<cplx> all;
    for (const auto& r : rec) all.insert(all.end(), r.begin(), r.end());
    grid = auto_grid(all);
    table = std::make_unique<RadialKernelTable>(
        k_table_reduced(opts.R, grid->max_radius() * 2.0 + 1.0, {0.0, 0.5, 1.0, 2.0, 5.0}));
    const double ratio = wigner_gaussianity_ratio(rec.front());
    if (std::abs(ratio - 2.0) > 0.5)
      spdlog::warn("phase_variance_series: fourth-moment ratio {:.3f} is far from the Gaussian value 2", ratio);
  }
  for (std::size_t q = 0; q < T; ++q) {
    out.times.push_back(t_grid[q]);
    if (opts.mode == VarianceMode::samples) {
      std::vector<double> ph(M);
      for (std::size_t j = 0; j < M; ++j) ph[j] = std::arg(rec[q][j]);
      const auto st = circular_stats_from_phases(ph);
      out.values.push_back(st.variance);
      out.stderrs.push_back(st.variance_err);
    } else {
      const auto field = convolve_samples(rec[q], *table, *grid, opts.jobs);
      const auto st = circular_stats(field);
      out.values.push_back(st.variance);
      out.stderrs.push_back(st.variance_err);
    }
    out.weights.push_back(static_cast<double>(M));
  }
  return out;
}

double effective_potential_diagnostic(const ModelParams& p) {
  const double pstar = p.P0 * p.R_r / (p.gamma_c * p.gamma_r);
  if (p.g_c == 0.0) return -pstar * p.g_r * p.gamma_c / p.gamma_r;
  return p.g_c * (1.0 - pstar * (p.g_r * p.gamma_c) / (p.g_c * p.gamma_r));
}

double bisect_homogeneous_threshold(const ModelParams& p, double rel_tol) {
  ModelParams h = p;
  h.pump_shape = PumpShape::uniform;
  h.noise = false;
  h.renormalize = false;
  h.N = 4;
  h.L = 4.0 * 10.0;
  h.dt = std::min(0.05, 0.1 / std::max({p.gamma_c, p.gamma_r, 1e-3}));
  const auto grows = [&](double P) {
    ModelParams q = h;
    q.P0 = P;
    Simulator sim(q);
    auto s = CondensateState::zeros(q.N);
    s.n_res = reservoir_steady(q, false);
    for (auto& v : s.psi) v = 1e-4;
    numerics::Rng rng(0);
    sim.advance(s, rng, 200.0);
    return std::abs(s.psi[0]) > 1e-4;
  };
  double lo = 1e-6, hi = 1.0;
  while (!grows(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e9) throw ConvergenceError("bisect_homogeneous_threshold: no growth found");
  }
  while ((hi - lo) > rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (grows(mid) ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

double locate_threshold(const ModelParams& p, double lo, double hi, const ThresholdOptions& opts) {
  if (!(hi > lo) || !(lo > 0.0)) throw std::invalid_argument("locate_threshold: need 0 < lo < hi");
  const auto proxy = [&](double P) {
    ModelParams q = p;
    q.P0 = P;
    const auto t = steady_state_target(q, opts.M, opts.seed, opts.t_relax, {}, opts.jobs, opts.window, opts.cadence);
    spdlog::info("locate_threshold: P0 = {:.4g}, coherence proxy = {:.3f}", P, t.coherence);
    return t.coherence;
  };
  if (proxy(lo) >= 0.5) throw ConvergenceError("locate_threshold: proxy already >= 1/2 at the lower bracket");
  if (proxy(hi) < 0.5) throw ConvergenceError("locate_threshold: proxy below 1/2 at the upper bracket");
  while ((hi - lo) > opts.rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (proxy(mid) >= 0.5 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

// --- serialization ---------------------------------------------------------

std::string params_to_json(const ModelParams& p) {
  nlohmann::ordered_json j;
  j["m_eff"] = p.m_eff;
  j["gamma_c"] = p.gamma_c;
  j["gamma_r"] = p.gamma_r;
  j["R_r"] = p.R_r;
  j["g_c"] = p.g_c;
  j["g_r"] = p.g_r;
  j["P0"] = p.P0;
  j["pump_width"] = p.pump_width;
  j["L"] = p.L;
  j["N"] = p.N;
  j["dt"] = p.dt;
  j["hbar"] = p.hbar;
  j["pump_shape"] = p.pump_shape == PumpShape::gaussian ? "gaussian" : "uniform";
  j["renormalize"] = p.renormalize;
  j["noise"] = p.noise;
  return j.dump();
}

ModelParams params_from_json(const std::string& text, const ModelParams& base) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("params_from_json: expected an object");
  ModelParams p = base;
  for (const auto& [key, v] : j.items()) {
    if (key == "m_eff") p.m_eff = v.get<double>();
    else if (key == "gamma_c") p.gamma_c = v.get<double>();
    else if (key == "gamma_r") p.gamma_r = v.get<double>();
    else if (key == "R_r") p.R_r = v.get<double>();
    else if (key == "g_c") p.g_c = v.get<double>();
    else if (key == "g_r") p.g_r = v.get<double>();
    else if (key == "P0") p.P0 = v.get<double>();
    else if (key == "pump_width") p.pump_width = v.get<double>();
    else if (key == "L") p.L = v.get<double>();
    else if (key == "N") p.N = v.get<int>();
    else if (key == "dt") p.dt = v.get<double>();
    else if (key == "hbar") p.hbar = v.get<double>();
    else if (key == "pump_shape") {
      const auto s = v.get<std::string>();
      if (s == "gaussian") p.pump_shape = PumpShape::gaussian;
      else if (s == "uniform") p.pump_shape = PumpShape::uniform;
      else throw std::invalid_argument("params_from_json: unknown pump_shape '" + s + "'");
    } else if (key == "renormalize") p.renormalize = v.get<bool>();
    else if (key == "noise") p.noise = v.get<bool>();
    else throw std::invalid_argument("params_from_json: unknown key '" + key + "'");
  }
  return p;
}

void write_checkpoint(const TrajectoryEnsemble& ens, const std::filesystem::path& stem) {
  std::filesystem::path csv_path = stem;
  csv_path += ".csv";
  std::filesystem::path json_path = stem;
  json_path += ".json";
  nlohmann::ordered_json j;
  j["params"] = nlohmann::json::parse(params_to_json(ens.params));
  j["M"] = ens.size();
  j["master_seed"] = ens.master_seed;
  std::vector<double> times;
  std::vector<std::string> rng_states;
  for (std::size_t k = 0; k < ens.size(); ++k) {
    times.push_back(ens.states[k].t);
    std::ostringstream os;
    os << ens.rngs[k];
    rng_states.push_back(os.str());
  }
  j["t"] = times;
  j["rng_states"] = rng_states;
  std::ofstream jo(json_path);
  if (!jo) throw std::runtime_error("write_checkpoint: cannot open " + json_path.string());
  jo << j.dump(1) << '\n';
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("write_checkpoint: cannot open " + csv_path.string());
  csv::write_header(out, {"traj", "re", "im", "n"});
  for (std::size_t k = 0; k < ens.size(); ++k) {
    const auto& s = ens.states[k];
    for (std::size_t i = 0; i < s.psi.size(); ++i)
      csv::write_row(out, {static_cast<double>(k), s.psi[i].real(), s.psi[i].imag(), s.n_res[i]});
  }
}

TrajectoryEnsemble read_checkpoint(const std::filesystem::path& stem) {
  std::filesystem::path csv_path = stem;
  csv_path += ".csv";
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::ifstream ji(json_path);
  if (!ji) throw std::runtime_error("read_checkpoint: cannot open " + json_path.string());
  const auto j = nlohmann::json::parse(ji);
  TrajectoryEnsemble ens;
  ens.params = params_from_json(j.at("params").dump());
  ens.master_seed = j.at("master_seed").get<std::uint64_t>();
  const auto M = j.at("M").get<std::size_t>();
  const auto times = j.at("t").get<std::vector<double>>();
  const auto rng_states = j.at("rng_states").get<std::vector<std::string>>();
  if (times.size() != M || rng_states.size() != M) throw std::runtime_error("read_checkpoint: inconsistent header");
  const auto t = csv::read(csv_path);
  csv::require_header(t, {"traj", "re", "im", "n"}, "read_checkpoint");
  const std::size_t cells = static_cast<std::size_t>(ens.params.N) * ens.params.N;
  if (t.rows.size() != M * cells) throw std::runtime_error("read_checkpoint: payload size mismatch");
  for (std::size_t k = 0; k < M; ++k) {
    auto s = CondensateState::zeros(ens.params.N);
    s.t = times[k];
    for (std::size_t i = 0; i < cells; ++i) {
      const auto& row = t.rows[k * cells + i];
      s.psi[i] = cplx(row[1], row[2]);
      s.n_res[i] = row[3];
    }
    ens.states.push_back(std::move(s));
    numerics::Rng rng;
    std::istringstream is(rng_states[k]);
    is >> rng;
    ens.rngs.push_back(rng);
  }
  return ens;
}

void write_series(const DecaySeries& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_series: cannot open " + path.string());
  csv::write_header(out, {"t_ps", "value", "stderr"});
  for (std::size_t i = 0; i < s.size(); ++i)
    csv::write_row(out, {s.times[i], s.values[i],
                         s.stderrs.empty() ? std::numeric_limits<double>::quiet_NaN() : s.stderrs[i]});
}

DecaySeries read_series(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, {"t_ps", "value", "stderr"}, "read_series");
  DecaySeries s;
  s.label = path.stem().string();
  bool any_err = false;
  for (const auto& r : t.rows) {
    s.times.push_back(r[0]);
    s.values.push_back(r[1]);
    s.stderrs.push_back(r[2]);
    any_err = any_err || std::isfinite(r[2]);
  }
  if (!any_err) s.stderrs.clear();
  s.validate();
  return s;
}

}  // namespace pomega
