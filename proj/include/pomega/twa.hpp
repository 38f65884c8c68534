#pragma once

// Stochastic Gross-Pitaevskii equation with an incoherent reservoir in the
// truncated Wigner approximation. Units: ps, um, meV.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <stdexcept>
#include <vector>

#include "pomega/analysis.hpp"
#include "pomega/bridge.hpp"
#include "pomega/numerics.hpp"

namespace pomega {

/// Electron mass in meV ps^2 / um^2.
inline constexpr double kElectronMass = 5685.630;

enum class PumpShape { gaussian, uniform };

struct ModelParams {
  double m_eff = 1e-4;  // electron masses
  double gamma_c = 0.2;
  double gamma_r = 0.3;
  double R_r = 0.015;
  double g_c = 6e-3;
  double g_r = 6e-3;
  double P0 = 8.0;
  double pump_width = 40.0;
  double L = 230.4;
  int N = 256;
  double dt = 0.02;
  double hbar = 0.6582;
  PumpShape pump_shape = PumpShape::gaussian;
  bool renormalize = true;  // |psi|^2_- = |psi|^2 - 1/dV in the nonlinear terms
  bool noise = true;

  void validate() const;
  double dx() const { return L / N; }
  double dV() const { return dx() * dx(); }
  /// hbar / (2 m): kinetic angular frequency per k^2, um^2 / ps
  double kinetic_coeff() const { return hbar / (2.0 * m_eff * kElectronMass); }
  /// 0.4 / (hbar k_max^2 / 2m) with k_max the lattice Nyquist wavevector
  double max_stable_dt() const;
  /// homogeneous mean-field threshold gamma_c gamma_r / R_r
  double homogeneous_threshold() const { return gamma_c * gamma_r / R_r; }
};

struct CondensateState {
  int N = 0;
  std::vector<cplx> psi;     // row-major N x N, um^-1
  std::vector<double> n_res;  // um^-2
  double t = 0.0;            // ps

  static CondensateState zeros(int N);
};

class NumericalInstability : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::vector<double> pump_profile(const ModelParams& p);

/// Stationary reservoir for psi = 0: P / (gamma_r - R_r / dV) with the
/// renormalization, P / gamma_r without it.
std::vector<double> reservoir_steady(const ModelParams& p, bool renormalized = true);

/// Classical RK4 for the drift (spectral kinetic term, periodic box) with the
/// additive noise increment applied once per step from the start-of-step
/// reservoir.
class Simulator {
public:
  explicit Simulator(const ModelParams& params);
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  const ModelParams& params() const { return p_; }
  const std::vector<double>& pump() const { return pump_; }

  /// One step of length dt. Throws NumericalInstability naming the first
  /// non-finite cell.
  void step(CondensateState& s, numerics::Rng& rng) const;
  /// Integer number of steps covering `duration` (rounded to the nearest step).
  void advance(CondensateState& s, numerics::Rng& rng, double duration) const;

private:
  struct Work;
  void drift(const std::vector<cplx>& psi, const std::vector<double>& n, std::vector<cplx>& dpsi,
             std::vector<double>& dn, Work& w) const;

  ModelParams p_;
  std::vector<double> pump_;
  std::vector<double> k2_;  // kinetic angular frequency per Fourier mode
  void* plan_fwd_ = nullptr;
  void* plan_bwd_ = nullptr;
};

/// Lattice mode index: k = 2 pi (mx, my) / L, components in (-N/2, N/2].
struct ModeIndex {
  int mx = 0;
  int my = 0;
};

/// Converts a wavevector (um^-1) to a lattice index; throws if off-lattice.
ModeIndex mode_index(const ModelParams& p, double kx, double ky);

/// psi_k = sqrt(dV) / N * sum_r psi(r) e^{-i k.r}, so sum_k |psi_k|^2 = dV sum_r |psi(r)|^2.
cplx mode_amplitude(const CondensateState& s, const ModelParams& p, ModeIndex k = {});

struct ModeStats {
  double n_mean = 0.0;  // <|psi_k|^2> - 1/2
  double n_var = 0.0;   // <|psi_k|^4> - <|psi_k|^2> - n_mean^2
  // displaced-thermal split n_coh^2 = n^2 + n - var; zero unless the estimate
  // exceeds twice its standard error, clamped to n
  double n_coh_sq = 0.0;
  double n_coh_sq_err = 0.0;
  double n_coh = 0.0;
  double n_th = 0.0;
  double coherence_proxy = 0.0;  // n_coh / n_mean
  double mean_field_sq = 0.0;    // |<psi_k>|^2
  std::vector<double> phase_samples;
};

ModeStats mode_stats(const std::vector<cplx>& samples);

struct TrajectoryEnsemble {
  ModelParams params;
  std::vector<CondensateState> states;
  std::vector<numerics::Rng> rngs;
  std::uint64_t master_seed = 0;

  std::size_t size() const { return states.size(); }
  std::vector<cplx> mode_samples(ModeIndex k = {}) const;
};

/// Evolves every trajectory by `duration`, in parallel.
void evolve(TrajectoryEnsemble& ens, const Simulator& sim, double duration, int jobs = 0);

/// Ensemble of M trajectories started from psi = 0 and the stationary reservoir.
TrajectoryEnsemble vacuum_ensemble(const ModelParams& p, std::size_t M, std::uint64_t seed);

struct InitPrepTarget {
  double n_mean = 0.0;
  double n_var = 0.0;
  double coherence = 0.0;  // coherence proxy n_coh / n_mean
  ModeIndex k;
};

/// Step (i): mode statistics of an ensemble relaxed from vacuum for t_relax ps,
/// pooled over snapshots every `cadence` ps during a further `window` ps.
InitPrepTarget steady_state_target(const ModelParams& p, std::size_t M, std::uint64_t seed, double t_relax,
                                   ModeIndex k = {}, int jobs = 0, double window = 0.0, double cadence = 20.0);

/// Step (ii): noise-free, unrenormalized mean-field steady state magnitude,
/// or the pump profile when the mean field does not condense.
std::vector<double> mean_field_envelope(const ModelParams& p, double t_relax = 1000.0);

struct PrepOptions {
  std::size_t M = 100;
  std::uint64_t seed = 1;
  double tol = 1e-2;
  int max_iterations = 60;
  double envelope_time = 1000.0;
  int jobs = 0;
};

struct PreparedEnsemble {
  TrajectoryEnsemble ensemble;
  double mu = 0.0;
  double sigma = 0.0;
  double residual = 0.0;  // largest relative residual over (n_mean, n_var, coherence)
  int iterations = 0;
};

/// Carries the best residual and the best-effort ensemble.
class PreparationError : public std::runtime_error {
public:
  PreparationError(const std::string& what, double best, std::shared_ptr<const PreparedEnsemble> ens)
      : std::runtime_error(what), best_residual(best), best(std::move(ens)) {}
  double best_residual;
  std::shared_ptr<const PreparedEnsemble> best;
};

/// Steps (iii)-(v): one complex normal sample per trajectory (mean mu, complex
/// standard deviation sigma, i.e. E|psi_k - mu|^2 = sigma^2) times the envelope,
/// normalized to unit mode projection; (mu, sigma) are solved with fixed draws
/// until the mode statistics match the target within tol.
PreparedEnsemble prepare_initial_state(const InitPrepTarget& target, const ModelParams& p, const PrepOptions& opts);

enum class VarianceMode { samples, bridge };

struct SeriesOptions {
  VarianceMode mode = VarianceMode::samples;
  // rotate each trajectory by its own mode phase at the first grid time, so
  // Var(phi) measures the phase drift relative to t_grid[0]
  bool reference_initial_phase = true;
  FilterParam R{};
  int jobs = 0;
};

/// Evolves the ensemble over t_grid (ps after the current time, increasing,
/// starting at >= 0) and records Var(phi) of the mode at each time.
DecaySeries phase_variance_series(TrajectoryEnsemble& ens, const Simulator& sim, ModeIndex k,
                                  const std::vector<double>& t_grid, const SeriesOptions& opts = {});

/// Phase-space grid that covers the samples with a margin; used by bridge mode.
PhaseSpaceGrid auto_grid(const std::vector<cplx>& samples, double margin = 5.0, std::size_t max_points_per_axis = 161);

/// g_c [1 - P* g_r gamma_c / (g_c gamma_r)], P* = P0 R_r / (gamma_c gamma_r).
double effective_potential_diagnostic(const ModelParams& p);

/// Mean-field threshold of a uniform pump, located by bisection on the sign
/// of the condensate growth rate of the simulated homogeneous system.
double bisect_homogeneous_threshold(const ModelParams& p, double rel_tol = 1e-3);

struct ThresholdOptions {
  std::size_t M = 50;
  std::uint64_t seed = 1;
  double t_relax = 600.0;
  double window = 400.0;
  double cadence = 20.0;
  double rel_tol = 0.02;
  int jobs = 0;
};

/// Pump power at which the coherence proxy of the selected mode crosses 1/2,
/// by bisection on [lo, hi].
double locate_threshold(const ModelParams& p, double lo, double hi, const ThresholdOptions& opts = {});

// --- checkpoints -----------------------------------------------------------

/// `<stem>.json` (params, time, seeds, RNG states) and `<stem>.csv`
/// (traj,re,im,n rows, row-major per trajectory).
void write_checkpoint(const TrajectoryEnsemble& ens, const std::filesystem::path& stem);
TrajectoryEnsemble read_checkpoint(const std::filesystem::path& stem);

/// JSON object with one key per ModelParams field.
std::string params_to_json(const ModelParams& p);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelParams params_from_json(const std::string& text, const ModelParams& base = {});

void write_series(const DecaySeries& s, const std::filesystem::path& path);
DecaySeries read_series(const std::filesystem::path& path);

}  // namespace pomega
