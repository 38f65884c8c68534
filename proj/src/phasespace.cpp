#include "pomega/phasespace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "pomega/csv.hpp"

namespace pomega {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

std::size_t axis_count(double lo, double hi, double step, const char* axis) {
  if (!(hi > lo)) throw std::invalid_argument(std::string("PhaseSpaceGrid: empty ") + axis + " range");
  const double span = (hi - lo) / step;
  const double n = std::round(span);
  if (std::abs(span - n) > 1e-9 * std::max(1.0, n))
    throw std::invalid_argument(std::string("PhaseSpaceGrid: ") + axis +
                                " range is not an integer multiple of the step");
  return static_cast<std::size_t>(n) + 1;
}

}  // namespace

FilterParam::FilterParam(double r) : r_(r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("FilterParam: R must be positive and finite");
}

PhaseSpaceGrid::PhaseSpaceGrid() : PhaseSpaceGrid(-20.0, 20.0, -20.0, 20.0, 0.25) {}

PhaseSpaceGrid::PhaseSpaceGrid(double q_min, double q_max, double p_min, double p_max, double step)
    : q_min_(q_min), q_max_(q_max), p_min_(p_min), p_max_(p_max), step_(step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("PhaseSpaceGrid: step must be positive");
  for (double v : {q_min, q_max, p_min, p_max}) require_finite(v, "PhaseSpaceGrid");
  nq_ = axis_count(q_min, q_max, step, "q");
  np_ = axis_count(p_min, p_max, step, "p");
}

PhaseSpaceGrid PhaseSpaceGrid::square(double half_width, double step) {
  return PhaseSpaceGrid(-half_width, half_width, -half_width, half_width, step);
}

double PhaseSpaceGrid::max_radius() const {
  const double q = std::max(std::abs(q_min_), std::abs(q_max_));
  const double p = std::max(std::abs(p_min_), std::abs(p_max_));
  return std::hypot(q, p);
}

double QuasiProbabilityField::normalization() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s * grid.cell_area();
}

// --- kernels ---------------------------------------------------------------

double kernel_omega(cplx gamma, FilterParam R) {
  require_finite(gamma.real(), "kernel_omega");
  require_finite(gamma.imag(), "kernel_omega");
  const double r = std::abs(gamma);
  const double R2 = R.value() * R.value();
  const double z = 2.0 * R.value() * r;
  if (z < 1e-6) {
    // J1(z)/z = 1/2 - z^2/16 + ...
    const double ratio = 0.5 - z * z / 16.0;
    return 4.0 * R2 * ratio * ratio / kPi;
  }
  const double j = numerics::bessel_j1(z) / r;
  return j * j / kPi;
}

double kernel_g(double t) {
  if (std::isnan(t)) throw std::invalid_argument("kernel_g: non-finite input");
  if (t < 0.0) throw std::invalid_argument("kernel_g: t must be >= 0");
  if (t >= 1.0) return 0.0;
  return (std::acos(t) - t * std::sqrt(1.0 - t * t)) / kPi;
}

double kernel_h(double X, FilterParam R, int derivative) {
  require_finite(X, "kernel_h");
  if (derivative < 0 || derivative > 3) throw std::invalid_argument("kernel_h: derivative order must be 0..3");
  const double twoR2 = 2.0 * R.value() * R.value();
  const double shift = derivative * 0.5 * kPi;
  // u = cos(theta) removes the (1-u)^{3/2} endpoint behaviour
  auto integrand = [&](double theta) {
    const double u = std::cos(theta);
    const double s = std::sin(theta);
    const double G = theta - s * u;
    return u * G * std::pow(u, derivative) * std::cos(u * X + shift) * std::exp(twoR2 * u * u) * s;
  };
  return numerics::integrate(integrand, 0.0, 0.5 * kPi, 1e-11, 1e-15);
}

double pattern_function(cplx alpha, double x, double phi, FilterParam R) {
  require_finite(x, "pattern_function");
  require_finite(phi, "pattern_function");
  const double Rv = R.value();
  const double X = 2.0 * Rv * (x - 2.0 * std::abs(alpha) * std::cos(phi + std::arg(alpha)));
  return 16.0 * Rv * Rv / (kPi * kPi * kPi) * kernel_h(X, R);
}

PatternTable::PatternTable(FilterParam R, double x_max, double spacing)
    : R_(R.value()), x_max_(x_max), spacing_(spacing), prefactor_(16.0 * R_ * R_ / (kPi * kPi * kPi)) {
  if (!(x_max > 0.0) || !(spacing > 0.0)) throw std::invalid_argument("PatternTable: bad lattice");
  const std::size_t n = static_cast<std::size_t>(std::ceil(x_max / spacing)) + 2;
  for (auto& t : table_) t.resize(n);
  numerics::parallel_for(n, 0, [&](std::size_t k) {
    const double X = static_cast<double>(k) * spacing_;
    for (int d = 0; d < 4; ++d) table_[d][k] = kernel_h(X, R, d);
  });
}

double PatternTable::eval(double X, int derivative) const {
  const double sign = (X < 0.0 && (derivative % 2 == 1)) ? -1.0 : 1.0;
  const double ax = std::abs(X);
  const double pos = ax / spacing_;
  const std::size_t k = static_cast<std::size_t>(pos);
  if (k + 1 >= table_[0].size()) return kernel_h(X, FilterParam(R_), derivative);
  const double t = pos - static_cast<double>(k);
  const auto& f = table_[derivative];
  const auto& df = table_[derivative + 1];
  const double t2 = t * t, t3 = t2 * t;
  const double h00 = 2 * t3 - 3 * t2 + 1;
  const double h10 = t3 - 2 * t2 + t;
  const double h01 = -2 * t3 + 3 * t2;
  const double h11 = t3 - t2;
  const double v = h00 * f[k] + h10 * spacing_ * df[k] + h01 * f[k + 1] + h11 * spacing_ * df[k + 1];
  return sign * v;
}

double PatternTable::pattern(cplx alpha, double x, double phi) const {
  const double X = 2.0 * R_ * (x - 2.0 * std::abs(alpha) * std::cos(phi + std::arg(alpha)));
  return prefactor_ * h(X);
}

// --- fields ----------------------------------------------------------------

QuasiProbabilityField omega_field(const PhaseSpaceGrid& grid, FilterParam R, cplx center) {
  QuasiProbabilityField f{grid, std::vector<double>(grid.size()), {}, {}};
  f.meta.R = R.value();
  for (std::size_t k = 0; k < grid.size(); ++k) f.values[k] = kernel_omega(grid.alpha(k) - center, R);
  return f;
}

CircularStats circular_stats(const QuasiProbabilityField& field) {
  const auto& g = field.grid;
  if (field.values.size() != g.size()) throw std::invalid_argument("circular_stats: field/grid size mismatch");
  const double area = g.cell_area();
  cplx res{};
  double amp = 0.0;
  double mass = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double v = field.values[k];
    if (!std::isfinite(v)) throw std::invalid_argument("circular_stats: non-finite field value");
    mass += std::abs(v);
    const cplx a = g.alpha(k);
    const double r = std::abs(a);
    if (r == 0.0) continue;
    res += v * (a / r);
    amp += v * r;
  }
  if (mass == 0.0) throw std::invalid_argument("circular_stats: all-zero field");
  CircularStats st;
  st.resultant = res * area;
  st.variance = 1.0 - std::abs(st.resultant);
  st.mean_amplitude = amp * area;
  if (field.has_sigma()) {
    const double rr = std::abs(st.resultant);
    const cplx dir = rr > 0.0 ? st.resultant / rr : cplx{};
    double var_r = 0.0, var_amp = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const cplx a = g.alpha(k);
      const double r = std::abs(a);
      if (r == 0.0) continue;
      const double s2 = field.sigmas[k] * field.sigmas[k];
      const double proj = rr > 0.0 ? (std::conj(dir) * (a / r)).real() : std::sqrt(0.5);
      var_r += s2 * proj * proj;
      var_amp += s2 * r * r;
    }
    st.variance_err = std::sqrt(var_r) * area;
    st.mean_amplitude_err = std::sqrt(var_amp) * area;
  }
  return st;
}

double sample_field(const QuasiProbabilityField& field, cplx alpha) {
  const auto& g = field.grid;
  const double fi = (alpha.real() - g.q_min()) / g.step();
  const double fj = (alpha.imag() - g.p_min()) / g.step();
  if (fi < 0.0 || fj < 0.0 || fi > static_cast<double>(g.nq() - 1) || fj > static_cast<double>(g.np() - 1))
    return 0.0;
  const std::size_t i = std::min(static_cast<std::size_t>(fi), g.nq() - 2);
  const std::size_t j = std::min(static_cast<std::size_t>(fj), g.np() - 2);
  const double tx = fi - static_cast<double>(i);
  const double ty = fj - static_cast<double>(j);
  const auto v = [&](std::size_t a, std::size_t b) { return field.values[g.index(a, b)]; };
  return (1 - tx) * (1 - ty) * v(i, j) + tx * (1 - ty) * v(i + 1, j) + (1 - tx) * ty * v(i, j + 1) +
         tx * ty * v(i + 1, j + 1);
}

QuasiProbabilityField phase_smear(const QuasiProbabilityField& field, double kappa, int n_phi) {
  if (kappa < 0.0) throw std::invalid_argument("phase_smear: kappa must be >= 0");
  if (n_phi < 8) throw std::invalid_argument("phase_smear: need at least 8 angles");
  QuasiProbabilityField out = field;
  out.sigmas.clear();
  if (kappa == 0.0) return out;
  std::vector<double> angles(n_phi), weights(n_phi);
  double wsum = 0.0;
  for (int j = 0; j < n_phi; ++j) {
    const double phi = kTwoPi * j / n_phi - kPi;
    // wrapped normal density on the lattice, images |m| <= 8
    double w = 0.0;
    for (int m = -8; m <= 8; ++m) {
      const double d = phi + kTwoPi * m;
      w += std::exp(-0.5 * d * d / (kappa * kappa));
    }
    angles[j] = phi;
    weights[j] = w;
    wsum += w;
  }
  for (auto& w : weights) w /= wsum;
  numerics::parallel_for(field.grid.size(), 0, [&](std::size_t k) {
    const cplx a = field.grid.alpha(k);
    double acc = 0.0;
    for (int j = 0; j < n_phi; ++j) acc += weights[j] * sample_field(field, a * std::polar(1.0, -angles[j]));
    out.values[k] = acc;
  });
  return out;
}

QuasiProbabilityField rotate_field(const QuasiProbabilityField& field, double theta) {
  QuasiProbabilityField out = field;
  out.sigmas.clear();
  const cplx back = std::polar(1.0, -theta);
  for (std::size_t k = 0; k < field.grid.size(); ++k) out.values[k] = sample_field(field, field.grid.alpha(k) * back);
  return out;
}

// --- export ----------------------------------------------------------------

void write_field(const QuasiProbabilityField& field, const std::filesystem::path& stem) {
  const auto& g = field.grid;
  std::filesystem::path csv_path = stem;
  csv_path += ".csv";
  std::filesystem::path json_path = stem;
  json_path += ".json";
  {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("write_field: cannot open " + csv_path.string());
    csv::write_header(out, {"q", "p", "value", "sigma"});
    for (std::size_t k = 0; k < g.size(); ++k) {
      const cplx a = g.alpha(k);
      const double s = field.has_sigma() ? field.sigmas[k] : std::numeric_limits<double>::quiet_NaN();
      csv::write_row(out, {a.real(), a.imag(), field.values[k], s});
    }
  }
  nlohmann::ordered_json j;
  j["R"] = field.meta.R;
  j["grid"] = {{"qmin", g.q_min()}, {"qmax", g.q_max()}, {"pmin", g.p_min()}, {"pmax", g.p_max()}, {"step", g.step()}};
  j["n_samples"] = field.meta.n_samples;
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["s"] = opt(field.meta.s);
  j["w"] = opt(field.meta.w);
  j["tau_ps"] = opt(field.meta.tau_ps);
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("write_field: cannot open " + json_path.string());
  out << j.dump(2) << '\n';
}

QuasiProbabilityField read_field(const std::filesystem::path& stem) {
  std::filesystem::path csv_path = stem;
  csv_path += ".csv";
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::ifstream jin(json_path);
  if (!jin) throw std::runtime_error("read_field: cannot open " + json_path.string());
  const auto j = nlohmann::json::parse(jin);
  const auto& jg = j.at("grid");
  PhaseSpaceGrid grid(jg.at("qmin").get<double>(), jg.at("qmax").get<double>(), jg.at("pmin").get<double>(),
                      jg.at("pmax").get<double>(), jg.at("step").get<double>());
  QuasiProbabilityField f{grid, std::vector<double>(grid.size()), {}, {}};
  f.meta.R = j.at("R").get<double>();
  f.meta.n_samples = j.at("n_samples").get<std::size_t>();
  const auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<double>();
  };
  f.meta.s = opt("s");
  f.meta.w = opt("w");
  f.meta.tau_ps = opt("tau_ps");
  const auto t = csv::read(csv_path);
  csv::require_header(t, {"q", "p", "value", "sigma"}, "read_field");
  if (t.rows.size() != grid.size()) throw std::runtime_error("read_field: row count does not match grid");
  std::vector<double> sig(grid.size());
  bool any_sigma = false;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    f.values[k] = t.rows[k][2];
    sig[k] = t.rows[k][3];
    any_sigma = any_sigma || !std::isnan(sig[k]);
  }
  if (any_sigma) f.sigmas = std::move(sig);
  return f;
}

}  // namespace pomega
