#pragma once

// Wigner -> P_Omega: the radial convolution kernel K and its application to
// trajectory samples of a mode amplitude.

#include <filesystem>
#include <vector>

#include "pomega/phasespace.hpp"

namespace pomega {

struct BruteForceKernel {
  std::vector<double> values;
  double max_imag = 0.0;  // largest |Im K| over the evaluation set
};

/// Evaluates the four-fold integral over (s', t', phi, theta) directly:
/// Gauss-Legendre in the radii, periodic trapezoid in the angles. Throws
/// ConvergenceError if the imaginary residue exceeds 1e-8.
BruteForceKernel k_table_bruteforce(FilterParam R, const std::vector<double>& radii, int radial_order = 32,
                                    int angular_points = 64);

/// K(r) = (16 R^2/pi^2) int_0^1 du u G(u) e^{2R^2u^2} J0(4 R r u), G(u) = arccos u - u sqrt(1-u^2),
/// i.e. (4/pi) int_0^{2R} db b J0(2 b r) e^{b^2/2} g(b/(2R)).
double k_reduced(double r, FilterParam R, int derivative = 0);

struct KernelValidation {
  std::vector<double> radii;
  std::vector<double> reduced;
  std::vector<double> brute;
  double max_rel_residual = 0.0;
};

/// Cubic Hermite table of K on [0, r_max]; evaluations beyond r_max fall back
/// to direct quadrature.
class RadialKernelTable {
public:
  RadialKernelTable(FilterParam R, double r_max, double spacing = 0.02);

  double R() const { return R_; }
  double r_max() const { return r_max_; }
  double spacing() const { return spacing_; }
  const std::vector<double>& values() const { return values_; }
  /// max |K| over the outer tenth of the table
  double tail_envelope() const { return tail_envelope_; }

  double operator()(double r) const;

  /// 2 pi int_0^rho r K(r) dr by the trapezoid rule on the table, rho the last
  /// lattice radius <= r_max. K shares the r^-3 tail of Omega, so
  /// `with_tail` adds the remainder 1/(pi R rho).
  double normalization(bool with_tail = true) const;

  KernelValidation validation;

private:
  double R_, r_max_, spacing_;
  std::vector<double> values_, derivs_;
  double tail_envelope_ = 0.0;
};

/// Builds the table and checks it against the brute-force integral at
/// `check_radii` (relative tolerance `tol`, with the absolute floor tol * K(0)).
/// Throws ConvergenceError on disagreement; callers may then fall back to
/// k_table_bruteforce.
RadialKernelTable k_table_reduced(FilterParam R, double r_max, const std::vector<double>& check_radii = {0, 0.5, 1, 2, 5},
                                  double tol = 1e-3, double spacing = 0.02);

/// P_Omega(alpha) = (1/M) sum_j K(|alpha - psi_j|) with sigma from the sample
/// variance of the contributions over sqrt(M - 1).
QuasiProbabilityField convolve_samples(const std::vector<cplx>& samples, const RadialKernelTable& table,
                                       const PhaseSpaceGrid& grid, int jobs = 0);

/// <|z - <z>|^4> / <|z - <z>|^2>^2 of the samples; 2 for a complex Gaussian.
double wigner_gaussianity_ratio(const std::vector<cplx>& samples);

/// Writes `<stem>.csv` (r,K) and `<stem>.json` metadata.
void write_kernel_table(const RadialKernelTable& table, const std::filesystem::path& stem);

}  // namespace pomega
