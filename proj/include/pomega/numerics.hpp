#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pomega {

using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Raised when a numerical routine cannot reach its requested accuracy.
class ConvergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace numerics {

/// Bessel functions of the first kind (thin wrappers over the C++17 special functions).
double bessel_j0(double x);
double bessel_j1(double x);

/// Adaptive Gauss-Legendre integration of f over [a, b].
///
/// Each panel is integrated with a 15-point rule and compared against the sum
/// over its two halves; panels are split until the difference drops below
/// max(abs_tol, rel_tol * |integral estimate|).
double integrate(const std::function<double(double)>& f, double a, double b,
                 double rel_tol = 1e-10, double abs_tol = 1e-14, int max_depth = 40);

/// Fixed-order Gauss-Legendre nodes/weights on [-1, 1] (Newton iteration on P_n).
struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussLegendreRule gauss_legendre(int order);

/// Wrap an angle into [0, 2pi).
inline double wrap_phase(double phi) {
  double w = std::fmod(phi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w -= kTwoPi;
  return w;
}

/// Derive an independent 64-bit stream seed from a master seed (SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

using Rng = std::mt19937_64;

/// Run body(i) for i in [0, n) on up to `jobs` threads. Output must be
/// written per index so the result does not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body);

/// Number of worker threads to use when the caller passes jobs <= 0.
int default_jobs();

}  // namespace numerics
}  // namespace pomega
