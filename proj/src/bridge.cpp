#include "pomega/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "pomega/csv.hpp"

namespace pomega {

BruteForceKernel k_table_bruteforce(FilterParam R, const std::vector<double>& radii, int radial_order,
                                    int angular_points) {
  if (radial_order < 2 || angular_points < 8) throw std::invalid_argument("k_table_bruteforce: orders too small");
  const double Rv = R.value();
  const auto gl = numerics::gauss_legendre(radial_order);
  std::vector<double> node(radial_order), weight(radial_order);
  for (int k = 0; k < radial_order; ++k) {
    node[k] = 0.5 * (gl.nodes[k] + 1.0);
    weight[k] = 0.5 * gl.weights[k] * node[k];  // includes the s' (t') Jacobian
  }
  std::vector<double> sn(angular_points), cs(angular_points);
  for (int k = 0; k < angular_points; ++k) {
    const double a = kTwoPi * k / angular_points;
    sn[k] = std::sin(a);
    cs[k] = std::cos(a);
  }
  const double dang = kTwoPi / angular_points;
  const double half_R2 = 0.5 * Rv * Rv;

  BruteForceKernel out;
  out.values.resize(radii.size());
  std::vector<double> imag(radii.size());
  numerics::parallel_for(radii.size(), 0, [&](std::size_t q) {
    const double A = 2.0 * Rv * std::abs(radii[q]);
    cplx total{};
    for (int is = 0; is < radial_order; ++is) {
      const double s = node[is];
      for (int it = 0; it < radial_order; ++it) {
        const double t = node[it];
        const double base = half_R2 * (s * s + t * t);
        cplx acc{};
        for (int ip = 0; ip < angular_points; ++ip) {
          for (int iv = 0; iv < angular_points; ++iv) {
            // cos(phi - theta) on the lattice
            const double cd = cs[ip] * cs[iv] + sn[ip] * sn[iv];
            const double mag = std::exp(base - Rv * Rv * s * t * cd);
            const double ph = -A * (t * sn[iv] - s * sn[ip]);
            acc += mag * std::polar(1.0, ph);
          }
        }
        total += weight[is] * weight[it] * acc;
      }
    }
    total *= dang * dang * Rv * Rv / (kPi * kPi * kPi);
    out.values[q] = total.real();
    imag[q] = std::abs(total.imag());
  });
  out.max_imag = radii.empty() ? 0.0 : *std::max_element(imag.begin(), imag.end());
  if (out.max_imag > 1e-8) throw ConvergenceError("k_table_bruteforce: imaginary residue above 1e-8");
  return out;
}

double k_reduced(double r, FilterParam R, int derivative) {
  if (!std::isfinite(r)) throw std::invalid_argument("k_reduced: non-finite radius");
  if (derivative < 0 || derivative > 1) throw std::invalid_argument("k_reduced: derivative must be 0 or 1");
  const double Rv = R.value();
  const double k4 = 4.0 * Rv * std::abs(r);
  const double twoR2 = 2.0 * Rv * Rv;
  // u = cos(theta) as in kernel_h
  auto integrand = [&](double theta) {
    const double u = std::cos(theta);
    const double s = std::sin(theta);
    const double G = theta - s * u;
    const double radial = derivative == 0 ? numerics::bessel_j0(k4 * u) : -4.0 * Rv * u * numerics::bessel_j1(k4 * u);
    return u * G * std::exp(twoR2 * u * u) * radial * s;
  };
  const double v = 16.0 * Rv * Rv / (kPi * kPi) * numerics::integrate(integrand, 0.0, 0.5 * kPi, 1e-11, 1e-16);
  return (derivative == 1 && r < 0.0) ? -v : v;
}

RadialKernelTable::RadialKernelTable(FilterParam R, double r_max, double spacing)
    : R_(R.value()), r_max_(r_max), spacing_(spacing) {
  if (!(r_max > 0.0) || !(spacing > 0.0)) throw std::invalid_argument("RadialKernelTable: bad lattice");
  if (R_ > 1.5)
    spdlog::warn("RadialKernelTable: R = {} > 1.5, exp(b^2/2) amplification makes K poorly conditioned", R_);
  const std::size_t n = static_cast<std::size_t>(std::ceil(r_max / spacing)) + 2;
  values_.resize(n);
  derivs_.resize(n);
  numerics::parallel_for(n, 0, [&](std::size_t k) {
    const double r = static_cast<double>(k) * spacing_;
    values_[k] = k_reduced(r, R);
    derivs_[k] = k_reduced(r, R, 1);
  });
  const std::size_t tail0 = n - std::max<std::size_t>(1, n / 10);
  for (std::size_t k = tail0; k < n; ++k) tail_envelope_ = std::max(tail_envelope_, std::abs(values_[k]));
}

double RadialKernelTable::operator()(double r) const {
  const double pos = r / spacing_;
  const std::size_t k = static_cast<std::size_t>(pos);
  if (k + 1 >= values_.size()) return k_reduced(r, FilterParam(R_));
  const double t = pos - static_cast<double>(k);
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * values_[k] + (t3 - 2 * t2 + t) * spacing_ * derivs_[k] +
         (-2 * t3 + 3 * t2) * values_[k + 1] + (t3 - t2) * spacing_ * derivs_[k + 1];
}

double RadialKernelTable::normalization(bool with_tail) const {
  const auto m = static_cast<std::size_t>(std::floor(r_max_ / spacing_ + 1e-9));
  double sum = 0.0;
  for (std::size_t k = 1; k <= m; ++k) {
    const double r0 = static_cast<double>(k - 1) * spacing_, r1 = static_cast<double>(k) * spacing_;
    sum += 0.5 * (r0 * values_[k - 1] + r1 * values_[k]) * spacing_;
  }
  double norm = 2.0 * std::numbers::pi * sum;
  const double rho = static_cast<double>(m) * spacing_;
  if (with_tail && rho > 0.0) norm += 1.0 / (std::numbers::pi * R_ * rho);
  return norm;
}

RadialKernelTable k_table_reduced(FilterParam R, double r_max, const std::vector<double>& check_radii, double tol,
                                  double spacing) {
  RadialKernelTable table(R, r_max, spacing);
  KernelValidation v;
  v.radii = check_radii;
  v.brute = k_table_bruteforce(R, check_radii).values;
  const double k0 = std::abs(table(0.0));
  for (std::size_t i = 0; i < check_radii.size(); ++i) {
    v.reduced.push_back(k_reduced(check_radii[i], R));
    const double denom = std::max(std::abs(v.brute[i]), k0 * tol);
    v.max_rel_residual = std::max(v.max_rel_residual, std::abs(v.reduced[i] - v.brute[i]) / denom);
  }
  if (v.max_rel_residual > tol) {
    spdlog::error("k_table_reduced: reduced kernel disagrees with the brute-force integral (residual {:.3g})",
                  v.max_rel_residual);
    throw ConvergenceError("k_table_reduced: validation against the brute-force kernel failed");
  }
  table.validation = std::move(v);
  return table;
}

QuasiProbabilityField convolve_samples(const std::vector<cplx>& samples, const RadialKernelTable& table,
                                       const PhaseSpaceGrid& grid, int jobs) {
  if (samples.empty()) throw std::invalid_argument("convolve_samples: empty sample set");
  const std::size_t M = samples.size();
  if (M < 100) spdlog::warn("convolve_samples: only {} samples (>= 100 recommended)", M);
  QuasiProbabilityField out{grid, std::vector<double>(grid.size()), {}, {}};
  out.meta.R = table.R();
  out.meta.n_samples = M;
  if (M >= 2) out.sigmas.assign(grid.size(), 0.0);
  numerics::parallel_for(grid.size(), jobs, [&](std::size_t k) {
    const cplx a = grid.alpha(k);
    double s1 = 0.0, s2 = 0.0;
    for (const auto& z : samples) {
      const double v = table(std::abs(a - z));
      s1 += v;
      s2 += v * v;
    }
    const double m1 = s1 / static_cast<double>(M);
    out.values[k] = m1;
    if (M >= 2) {
      const double var = std::max(0.0, s2 / static_cast<double>(M) - m1 * m1);
      out.sigmas[k] = std::sqrt(var / static_cast<double>(M - 1));
    }
  });
  return out;
}

double wigner_gaussianity_ratio(const std::vector<cplx>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("wigner_gaussianity_ratio: need at least 2 samples");
  cplx mean{};
  for (const auto& z : samples) mean += z;
  mean /= static_cast<double>(samples.size());
  double m2 = 0.0, m4 = 0.0;
  for (const auto& z : samples) {
    const double d = std::norm(z - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= static_cast<double>(samples.size());
  m4 /= static_cast<double>(samples.size());
  if (m2 == 0.0) throw std::invalid_argument("wigner_gaussianity_ratio: samples have zero spread");
  return m4 / (m2 * m2);
}

void write_kernel_table(const RadialKernelTable& table, const std::filesystem::path& stem) {
  std::filesystem::path csv_path = stem;
  csv_path += ".csv";
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("write_kernel_table: cannot open " + csv_path.string());
  csv::write_header(out, {"r", "K"});
  for (std::size_t k = 0; k < table.values().size(); ++k)
    csv::write_row(out, {static_cast<double>(k) * table.spacing(), table.values()[k]});
  nlohmann::ordered_json j;
  j["R"] = table.R();
  j["r_max"] = table.r_max();
  j["spacing"] = table.spacing();
  j["interpolation"] = "cubic_hermite";
  j["quadrature"] = {{"reduced", "adaptive_gauss_legendre_15"},
                     {"bruteforce_radial_order", 32},
                     {"bruteforce_angular_points", 64}};
  j["tail_envelope"] = table.tail_envelope();
  j["validation"] = {{"radii", table.validation.radii},
                     {"reduced", table.validation.reduced},
                     {"bruteforce", table.validation.brute},
                     {"max_rel_residual", table.validation.max_rel_residual}};
  std::ofstream jo(json_path);
  if (!jo) throw std::runtime_error("write_kernel_table: cannot open " + json_path.string());
  jo << j.dump(2) << '\n';
}

}  // namespace pomega
