#include "pomega/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "pomega/csv.hpp"

namespace pomega {

void BinningGrid::validate() const {
  if (!(x_width > 0.0) || !(phi_width > 0.0)) throw std::invalid_argument("BinningGrid: widths must be positive");
  if (!(x_max > x_min)) throw std::invalid_argument("BinningGrid: empty x range");
  const double k = x_min / x_width;
  if (std::abs(k - std::round(k)) > 1e-9) throw std::invalid_argument("BinningGrid: x_min must be a multiple of x_width");
  const double span = (x_max - x_min) / x_width;
  if (std::abs(span - std::round(span)) > 1e-9)
    throw std::invalid_argument("BinningGrid: x range must be a multiple of x_width");
  if (n_phi() < 8) throw std::invalid_argument("BinningGrid: need at least 8 phase bins");
  if (phi_subdivisions < 1) throw std::invalid_argument("BinningGrid: phi_subdivisions must be >= 1");
}

std::size_t BinningGrid::n_x() const { return static_cast<std::size_t>(std::round((x_max - x_min) / x_width)) + 1; }

std::size_t BinningGrid::n_phi() const {
  return 2 * static_cast<std::size_t>(std::max(1.0, std::round(kPi / phi_width)));
}

double BinnedHistogram::sub_center(std::size_t j, std::size_t s) const {
  const double S = static_cast<double>(grid.phi_subdivisions);
  const double w = kTwoPi / static_cast<double>(grid.n_phi());
  return grid.phi_center(j) + (static_cast<double>(s) + 0.5 - 0.5 * S) * w / S;
}

std::uint64_t BinnedHistogram::column_total(std::size_t j) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < grid.n_x(); ++i) s += count(i, j);
  return s;
}

std::size_t BinnedHistogram::nonempty_columns() const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < grid.n_phi(); ++j) n += column_total(j) > 0 ? 1 : 0;
  return n;
}

BinnedHistogram bin_dataset(const QuadratureDataset& data, const BinningGrid& grid) {
  if (data.empty()) throw std::invalid_argument("bin_dataset: empty dataset");
  grid.validate();
  const std::size_t nx = grid.n_x();
  const std::size_t nphi = grid.n_phi();
  const std::size_t nsub = grid.phi_subdivisions;
  const double dphi = kTwoPi / static_cast<double>(nphi);
  const long i0 = std::lround(grid.x_min / grid.x_width);

  BinnedHistogram h;
  h.grid = grid;
  h.counts.assign(nx * nphi, 0);
  h.sub.assign(nx * nphi * nsub, {});
  for (const auto& s : data) {
    if (!std::isfinite(s.x) || !std::isfinite(s.phi)) throw std::invalid_argument("bin_dataset: non-finite sample");
    double x = s.x;
    if (x < grid.x_min || x > grid.x_max) {
      ++h.overflow;
      x = std::clamp(x, grid.x_min, grid.x_max);
    }
    // rounding relative to zero keeps x -> -x symmetric
    const long k = std::clamp(std::lround(x / grid.x_width) - i0, 0L, static_cast<long>(nx) - 1);
    const double phi = numerics::wrap_phase(s.phi);
    const std::size_t j = static_cast<std::size_t>(std::lround(phi / dphi)) % nphi;
    const double ox = x - grid.x_center(static_cast<std::size_t>(k));
    double op = phi - grid.phi_center(j);
    if (op > kPi) op -= kTwoPi;
    const auto sidx = std::min(nsub - 1, static_cast<std::size_t>(
                                             std::max(0.0, (op / dphi + 0.5) * static_cast<double>(nsub))));
    op = phi - h.sub_center(j, sidx);
    if (op > kPi) op -= kTwoPi;
    if (op < -kPi) op += kTwoPi;
    ++h.counts[j * nx + static_cast<std::size_t>(k)];
    auto& c = h.sub[(j * nsub + sidx) * nx + static_cast<std::size_t>(k)];
    ++c.count;
    c.sdx += ox;
    c.sdp += op;
    c.sdx2 += ox * ox;
    c.sdp2 += op * op;
    c.sdxdp += ox * op;
  }
  h.total = data.size();
  if (h.overflow > 0) spdlog::warn("bin_dataset: {} samples outside x range clamped into boundary bins", h.overflow);
  return h;
}

namespace {

constexpr int kMaxCellNodes = 24;

struct CellTerm {
  double w;  // N(x,phi) / N_phi
  double x, c, s;
  double vx, vp, cxp;
};

}  // namespace

QuasiProbabilityField estimate_field(const BinnedHistogram& hist, const PhaseSpaceGrid& grid, FilterParam R,
                                     const EstimateOptions& opts) {
  const auto& bg = hist.grid;
  const std::size_t nx = bg.n_x();
  const std::size_t nphi = bg.n_phi();
  const bool second = opts.mode == EvaluationMode::cell_average;

  std::vector<CellTerm> terms;
  std::size_t phi_eff = 0;
  std::uint64_t n_used = 0;
  for (std::size_t j = 0; j < nphi; ++j) {
    const std::uint64_t col = hist.column_total(j);
    if (col == 0) continue;
    ++phi_eff;
    n_used += col;
    for (std::size_t i = 0; i < nx; ++i) {
      if (!second) {
        const std::uint64_t n = hist.count(i, j);
        if (n == 0) continue;
        const double phi = bg.phi_center(j);
        terms.push_back({static_cast<double>(n) / static_cast<double>(col), bg.x_center(i), std::cos(phi),
                         std::sin(phi), 0, 0, 0});
        continue;
      }
      for (std::size_t s = 0; s < bg.phi_subdivisions; ++s) {
        const auto& cell = hist.sub_cell(i, j, s);
        if (cell.count == 0) continue;
        const double n = static_cast<double>(cell.count);
        const double mx = cell.sdx / n, mp = cell.sdp / n;
        const double phi = hist.sub_center(j, s) + mp;
        CellTerm t{n / static_cast<double>(col), bg.x_center(i) + mx, std::cos(phi), std::sin(phi), 0, 0, 0};
        t.vx = std::max(0.0, cell.sdx2 / n - mx * mx);
        t.vp = std::max(0.0, cell.sdp2 / n - mp * mp);
        t.cxp = cell.sdxdp / n - mx * mp;
        terms.push_back(t);
      }
    }
  }
  if (phi_eff == 0) throw std::invalid_argument("estimate_field: all phase columns are empty");
  if (phi_eff < nphi) spdlog::info("estimate_field: {} of {} phase columns empty", nphi - phi_eff, nphi);

  const double Rv = R.value();
  const double x_reach = std::max(std::abs(bg.x_min), std::abs(bg.x_max)) + bg.x_width;
  const PatternTable table(R, 2.0 * Rv * (x_reach + 2.0 * grid.max_radius()) + 1.0, 0.02);
  const double C = 16.0 * Rv * Rv / (kPi * kPi);  // pi * f_Omega = C * h
  const double inv_phi = 1.0 / static_cast<double>(phi_eff);

  QuasiProbabilityField out{grid, std::vector<double>(grid.size()), {}, {}};
  out.meta.R = Rv;
  out.meta.n_samples = n_used;
  const bool with_sigma = n_used >= 2;
  if (with_sigma) out.sigmas.assign(grid.size(), 0.0);

  // Gauss-Legendre rules on [-1, 1] for the in-cell phase average
  const double half_bin = kPi / static_cast<double>(nphi * bg.phi_subdivisions);
  std::vector<numerics::GaussLegendreRule> rules(kMaxCellNodes + 1);
  for (int m = 2; m <= kMaxCellNodes; ++m) rules[m] = numerics::gauss_legendre(m);

  numerics::parallel_for(grid.size(), opts.jobs, [&](std::size_t k) {
    const cplx a = grid.alpha(k);
    const double rho = std::abs(a);
    const double th = std::arg(a);
    const double ct = std::cos(th), st = std::sin(th);
    // nodes needed to follow cos(phi + arg alpha) across one phase bin
    const int m = std::clamp(static_cast<int>(std::ceil(opts.node_density * 4.0 * Rv * rho * half_bin)) + 2, 2,
                             kMaxCellNodes);
    const auto& rule = rules[m];
    double m1 = 0.0, m2 = 0.0;
    for (const auto& t : terms) {
      const double cs = t.c * ct - t.s * st;  // cos(phi + arg alpha)
      if (!second) {
        const double h = table.h(2.0 * Rv * (t.x - 2.0 * rho * cs));
        m1 += t.w * h;
        m2 += t.w * h * h;
        continue;
      }
      const double sn = t.s * ct + t.c * st;
      if (t.vp == 0.0) {
        const double X = 2.0 * Rv * (t.x - 2.0 * rho * cs);
        const double h = table.h(X), h2 = table.d2h(X), h1 = table.dh(X);
        const double varX = 4.0 * Rv * Rv * t.vx;
        m1 += t.w * (h + 0.5 * h2 * varX);
        m2 += t.w * (h * h + (h1 * h1 + h * h2) * varX);
        continue;
      }
      // phase spread modelled as uniform with matched variance; x follows its
      // linear regression on phase, the residual x spread enters at second order
      const double width = std::sqrt(3.0 * t.vp);
      const double slope = t.cxp / t.vp;
      const double varX = 4.0 * Rv * Rv * std::max(0.0, t.vx - slope * t.cxp);
      double e1 = 0.0, e2 = 0.0;
      for (int q = 0; q < m; ++q) {
        const double d = width * rule.nodes[q];
        const double cd = std::cos(d), sd = std::sin(d);
        const double X = 2.0 * Rv * (t.x + slope * d - 2.0 * rho * (cs * cd - sn * sd));
        const double h = table.h(X), h1 = table.dh(X), h2 = table.d2h(X);
        const double wq = 0.5 * rule.weights[q];
        e1 += wq * (h + 0.5 * h2 * varX);
        e2 += wq * (h * h + (h1 * h1 + h * h2) * varX);
      }
      m1 += t.w * e1;
      m2 += t.w * e2;
    }
    m1 *= C * inv_phi;
    m2 *= C * C * inv_phi;
    out.values[k] = m1;
    if (with_sigma) out.sigmas[k] = std::sqrt(std::max(0.0, m2 - m1 * m1) / static_cast<double>(n_used - 1));
  });
  return out;
}

// --- synthetic data --------------------------------------------------------

void StateSpec::validate() const {
  if (!(nbar >= 0.0) || !std::isfinite(nbar)) throw std::invalid_argument("StateSpec: nbar must be >= 0");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("StateSpec: kappa must be >= 0");
  if (!std::isfinite(alpha0.real()) || !std::isfinite(alpha0.imag()))
    throw std::invalid_argument("StateSpec: non-finite amplitude");
}

QuadratureDataset synth_quadratures(const StateSpec& state, std::size_t n, std::uint64_t seed) {
  state.validate();
  if (n == 0) throw std::invalid_argument("synth_quadratures: n must be >= 1");
  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  const double sd = std::sqrt(2.0 * state.nbar + 1.0);
  QuadratureDataset out(n);
  numerics::parallel_for(chunks, 0, [&](std::size_t c) {
    numerics::Rng rng(numerics::derive_seed(seed, c));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, kTwoPi);
    const std::size_t end = std::min(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const double phi = numerics::wrap_phase(uni(rng));
      cplx a = state.alpha0;
      if (state.kind == StateSpec::Kind::phase_diffused && state.kappa > 0.0)
        a *= std::polar(1.0, state.kappa * normal(rng));
      const double mean = 2.0 * (std::polar(1.0, phi) * a).real();
      out[i] = {mean + sd * normal(rng), phi};
    }
  });
  return out;
}

void write_dataset(const QuadratureDataset& data, std::ostream& out) {
  csv::write_header(out, {"index", "x", "phi"});
  for (std::size_t i = 0; i < data.size(); ++i) out << i << ',' << csv::format(data[i].x) << ',' << csv::format(data[i].phi) << '\n';
}

void write_dataset(const QuadratureDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path.string());
  write_dataset(data, out);
}

QuadratureDataset read_dataset(std::istream& in) {
  const auto t = csv::read(in);
  csv::require_header(t, {"index", "x", "phi"}, "read_dataset");
  QuadratureDataset d;
  d.reserve(t.rows.size());
  for (const auto& r : t.rows) d.push_back({r[1], r[2]});
  return d;
}

QuadratureDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace pomega
