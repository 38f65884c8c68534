#pragma once

// Regularized Glauber-Sudarshan distributions built on the non-Gaussian,
// phase-invariant kernel
//
//     Omega(gamma) = [ J1(2 R |gamma|) / (sqrt(pi) |gamma|) ]^2 ,
//
// its pattern functions for homodyne data, and circular statistics of the
// resulting phase-space fields. Quadrature convention: x(phi) = e^{i phi} a +
// e^{-i phi} a^dagger, so the vacuum quadrature variance is 1.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "pomega/numerics.hpp"

namespace pomega {

inline constexpr double kDefaultFilterR = 0.7;

/// Width parameter R > 0 of the regularizing kernel.
class FilterParam {
public:
  explicit FilterParam(double r = kDefaultFilterR);
  double value() const { return r_; }

private:
  double r_;
};

/// Rectangular grid of phase-space points alpha = q + i p (q-major order).
class PhaseSpaceGrid {
public:
  PhaseSpaceGrid();  // q, p in [-20, 20], step 0.25
  PhaseSpaceGrid(double q_min, double q_max, double p_min, double p_max, double step);

  static PhaseSpaceGrid square(double half_width, double step);

  double q_min() const { return q_min_; }
  double q_max() const { return q_max_; }
  double p_min() const { return p_min_; }
  double p_max() const { return p_max_; }
  double step() const { return step_; }

  std::size_t nq() const { return nq_; }
  std::size_t np() const { return np_; }
  std::size_t size() const { return nq_ * np_; }

  double q(std::size_t i) const { return q_min_ + static_cast<double>(i) * step_; }
  double p(std::size_t j) const { return p_min_ + static_cast<double>(j) * step_; }
  std::size_t index(std::size_t i, std::size_t j) const { return i * np_ + j; }
  cplx alpha(std::size_t flat) const { return {q(flat / np_), p(flat % np_)}; }
  double cell_area() const { return step_ * step_; }

  /// Largest |alpha| on the grid.
  double max_radius() const;

  bool operator==(const PhaseSpaceGrid&) const = default;

private:
  double q_min_, q_max_, p_min_, p_max_, step_;
  std::size_t nq_, np_;
};

struct FieldMeta {
  double R = kDefaultFilterR;
  std::size_t n_samples = 0;
  std::optional<double> s;
  std::optional<double> w;
  std::optional<double> tau_ps;
};

/// P_Omega (and its pointwise standard error) sampled on a PhaseSpaceGrid.
struct QuasiProbabilityField {
  PhaseSpaceGrid grid;
  std::vector<double> values;
  std::vector<double> sigmas;  // empty when no uncertainty is available
  FieldMeta meta;

  bool has_sigma() const { return !sigmas.empty(); }
  /// Riemann sum of values * step^2 over the grid.
  double normalization() const;
};

struct CircularStats {
  cplx resultant;
  double variance = 1.0;
  double mean_amplitude = 0.0;
  // Linearized propagation of pointwise sigmas (independent points); zero without sigmas.
  double variance_err = 0.0;
  double mean_amplitude_err = 0.0;
};

// --- closed-form kernels ---------------------------------------------------

/// Omega(gamma) for width R; Omega(0) = R^2 / pi.
double kernel_omega(cplx gamma, FilterParam R);

/// g(t) = (1/pi)[arccos t - t sqrt(1 - t^2)] on [0, 1], 0 beyond.
double kernel_g(double t);

/// h(X, R) = int_0^1 du u [arccos u - u sqrt(1-u^2)] cos(uX) exp(2 R^2 u^2).
/// `derivative` selects d^n h / dX^n for n in 0..3.
double kernel_h(double X, FilterParam R, int derivative = 0);

/// f_Omega(alpha; x; phi) = 16 R^2 / pi^3 * h(2R[x - 2|alpha| cos(phi + arg alpha)], R).
double pattern_function(cplx alpha, double x, double phi, FilterParam R);

/// Memoized h(X, R) and its first two derivatives for |X| <= x_max.
///
/// Lattice values of h..h''' are computed by adaptive quadrature and
/// interpolated with cubic Hermite polynomials; arguments outside the lattice
/// fall back to direct quadrature.
class PatternTable {
public:
  PatternTable(FilterParam R, double x_max, double spacing = 0.01);

  double R() const { return R_; }
  double x_max() const { return x_max_; }

  double h(double X) const { return eval(X, 0); }
  double dh(double X) const { return eval(X, 1); }
  double d2h(double X) const { return eval(X, 2); }

  /// f_Omega using the memoized h.
  double pattern(cplx alpha, double x, double phi) const;

  /// 16 R^2 / pi^3
  double prefactor() const { return prefactor_; }

private:
  double eval(double X, int derivative) const;

  double R_;
  double x_max_;
  double spacing_;
  double prefactor_;
  std::vector<double> table_[4];  // h, h', h'', h''' at k * spacing
};

// --- fields ----------------------------------------------------------------

/// Omega(alpha - center) tabulated on the grid (no sigmas).
QuasiProbabilityField omega_field(const PhaseSpaceGrid& grid, FilterParam R, cplx center = {});

/// Resultant, circular variance and truncated mean amplitude. The alpha = 0
/// grid point carries zero weight.
CircularStats circular_stats(const QuasiProbabilityField& field);

/// Bilinear interpolation of the field values; zero outside the grid.
double sample_field(const QuasiProbabilityField& field, cplx alpha);

/// Phase-smeared copy F_kappa(alpha) = sum_j p_kappa(phi_j) F(alpha e^{-i phi_j}) with a
/// wrapped-normal p_kappa on n_phi equally spaced angles (F by bilinear interpolation).
QuasiProbabilityField phase_smear(const QuasiProbabilityField& field, double kappa, int n_phi = 256);

/// Copy of the field rotated by angle theta about the origin (bilinear resampling).
QuasiProbabilityField rotate_field(const QuasiProbabilityField& field, double theta);

// --- export ----------------------------------------------------------------

/// Writes `<stem>.csv` (q,p,value,sigma) and `<stem>.json` metadata.
void write_field(const QuasiProbabilityField& field, const std::filesystem::path& stem);
QuasiProbabilityField read_field(const std::filesystem::path& stem);

}  // namespace pomega
