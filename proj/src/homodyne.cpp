#include "pomega/homodyne.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "pomega/csv.hpp"

namespace pomega {

void AnnulusSelector::validate() const {
  if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("AnnulusSelector: s must be >= 0");
  if (!(w > 0.0)) throw std::invalid_argument("AnnulusSelector: w must be > 0");
}

double AnnulusSelector::lower() const { return std::max(0.0, s - 0.5 * w); }
double AnnulusSelector::upper() const { return s + 0.5 * w; }

std::size_t HusimiBinSpec::nq() const { return static_cast<std::size_t>(std::ceil((q_max - q_min) / width - 1e-9)); }
std::size_t HusimiBinSpec::np() const { return static_cast<std::size_t>(std::ceil((p_max - p_min) / width - 1e-9)); }

RecordStream orthogonality_filter(const RecordStream& records, std::size_t window, double margin) {
  if (window < 1) throw std::invalid_argument("orthogonality_filter: window must be >= 1");
  RecordStream out;
  // monotonic deques of indices for the trailing max and min of X1 X2
  std::deque<std::size_t> hi, lo;
  std::vector<double> prod(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    prod[i] = records[i].X1 * records[i].X2;
    while (!hi.empty() && prod[hi.back()] <= prod[i]) hi.pop_back();
    while (!lo.empty() && prod[lo.back()] >= prod[i]) lo.pop_back();
    hi.push_back(i);
    lo.push_back(i);
    while (hi.front() + window <= i) hi.pop_front();
    while (lo.front() + window <= i) lo.pop_front();
    const double p2p = prod[hi.front()] - prod[lo.front()];
    if (std::abs(prod[i]) <= margin * p2p || prod[i] == 0.0) out.push_back(records[i]);
  }
  return out;
}

HusimiHistogram husimi_histogram(const RecordStream& records, const HusimiBinSpec& spec) {
  if (records.empty()) throw std::invalid_argument("husimi_histogram: empty record stream");
  if (!(spec.width > 0.0) || !(spec.q_max > spec.q_min) || !(spec.p_max > spec.p_min))
    throw std::invalid_argument("husimi_histogram: bad bin spec");
  HusimiHistogram h;
  h.spec = spec;
  const std::size_t nq = spec.nq(), np = spec.np();
  h.counts.assign(nq * np, 0);
  double sq = 0, sp = 0;
  for (const auto& r : records) {
    sq += r.X1;
    sp += r.X2;
    const double fi = std::floor((r.X1 - spec.q_min) / spec.width);
    const double fj = std::floor((r.X2 - spec.p_min) / spec.width);
    if (fi >= 0 && fj >= 0 && fi < static_cast<double>(nq) && fj < static_cast<double>(np))
      ++h.counts[static_cast<std::size_t>(fi) * np + static_cast<std::size_t>(fj)];
  }
  const double n = static_cast<double>(records.size());
  h.total = records.size();
  h.mean = {sq / n, sp / n};
  double cqq = 0, cqp = 0, cpp = 0;
  for (const auto& r : records) {
    const double a = r.X1 - h.mean[0], b = r.X2 - h.mean[1];
    cqq += a * a;
    cqp += a * b;
    cpp += b * b;
  }
  const double dof = std::max(1.0, n - 1.0);
  h.cov = {cqq / dof, cqp / dof, cpp / dof};
  return h;
}

double reconstruct_phase(const MultiChannelRecord& r) {
  if (r.X1 == 0.0 && r.X2 == 0.0) throw std::invalid_argument("reconstruct_phase: (X1, X2) = (0, 0)");
  return numerics::wrap_phase(r.dphi + std::atan2(r.X2, r.X1));
}

PostselectResult postselect(const RecordStream& records, const AnnulusSelector& sel) {
  sel.validate();
  PostselectResult res;
  for (const auto& r : records) {
    const double rad = std::hypot(r.X1, r.X2);
    if (!sel.contains(rad) || rad == 0.0) continue;
    res.data.push_back({r.X3, reconstruct_phase(r)});
  }
  res.retained = res.data.size();
  res.empty = res.data.empty();
  if (res.empty) spdlog::warn("postselect: no records in annulus s={} w={}", sel.s, sel.w);
  return res;
}

RecordStream range_gate(const RecordStream& records, double lo_percentile, double hi_percentile) {
  if (!(lo_percentile >= 0.0 && hi_percentile <= 100.0 && lo_percentile < hi_percentile))
    throw std::invalid_argument("range_gate: need 0 <= lo < hi <= 100");
  if (records.empty()) return {};
  std::vector<double> radii;
  radii.reserve(records.size());
  for (const auto& r : records) radii.push_back(std::hypot(r.X1, r.X2));
  std::vector<double> sorted = radii;
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double pct) {
    const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t k = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(k);
    return k + 1 < sorted.size() ? sorted[k] * (1 - f) + sorted[k + 1] * f : sorted[k];
  };
  const double lo = quantile(lo_percentile), hi = quantile(hi_percentile);
  RecordStream out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (radii[i] >= lo && radii[i] <= hi) out.push_back(records[i]);
  return out;
}

RecordStream recover_dphi(const RecordStream& records, std::size_t window) {
  if (window < 1) throw std::invalid_argument("recover_dphi: window must be >= 1");
  const std::size_t n = records.size();
  // <(X1 - i X2) X3> = 2 e^{i dphi} <|a|^2> for phase-random emission
  std::vector<cplx> prefix(n + 1);
  for (std::size_t i = 0; i < n; ++i)
    prefix[i + 1] = prefix[i] + cplx(records[i].X1, -records[i].X2) * records[i].X3;
  RecordStream out = records;
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i >= half ? i - half : 0;
    const std::size_t b = std::min(n, i + half + 1);
    out[i].dphi = numerics::wrap_phase(std::arg(prefix[b] - prefix[a]));
  }
  return out;
}

void RecordDynamics::validate() const {
  for (double v : {delay_ps, phase_diffusion, amplitude_relax, oscillation_hz, modulation_depth})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("RecordDynamics: rates must be >= 0");
  if (!(rep_rate_hz > 0.0)) throw std::invalid_argument("RecordDynamics: repetition rate must be > 0");
  if (!(sweep_period > 0.0)) throw std::invalid_argument("RecordDynamics: sweep period must be > 0");
}

RecordStream synth_records(const StateSpec& state, std::size_t n, std::uint64_t seed, const RecordDynamics& dyn) {
  state.validate();
  dyn.validate();
  if (n == 0) throw std::invalid_argument("synth_records: n must be >= 1");
  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  const double tau = dyn.delay_ps * 1e-12;
  const double relax = std::exp(-dyn.amplitude_relax * dyn.delay_ps);
  const double refill = std::sqrt(state.nbar * (1.0 - relax * relax));
  const double dphase_sd = std::sqrt(2.0 * dyn.phase_diffusion * dyn.delay_ps);
  const double thermal_sd = std::sqrt(0.5 * state.nbar);  // per real component
  const bool diffused = state.kind == StateSpec::Kind::phase_diffused;

  RecordStream out(n);
  numerics::parallel_for(chunks, 0, [&](std::size_t c) {
    numerics::Rng rng(numerics::derive_seed(seed, c));
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t end = std::min(n, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const double t = static_cast<double>(i) / dyn.rep_rate_hz;
      const auto modulation = [&](double time) {
        return 1.0 + dyn.modulation_depth * std::cos(kTwoPi * dyn.oscillation_hz * time);
      };
      const double theta = diffused ? state.kappa * normal(rng) : 0.0;
      const cplx coh = state.alpha0 * std::polar(1.0, theta);
      const cplx zeta(thermal_sd * normal(rng), thermal_sd * normal(rng));
      const cplx a = coh * modulation(t) + zeta;

      const double u = std::fmod(static_cast<double>(i) / dyn.sweep_period, 1.0);
      const double dphi = numerics::wrap_phase(kTwoPi * (u < 0.5 ? 2.0 * u : 2.0 - 2.0 * u));

      const cplx xi(normal(rng), normal(rng));
      const cplx zeta_d = relax * zeta + refill * std::sqrt(0.5) * xi;
      const cplx a_d = std::polar(1.0, dphase_sd * normal(rng)) * (coh * modulation(t + tau) + zeta_d);

      auto& r = out[i];
      r.t_index = static_cast<std::int64_t>(i);
      r.X1 = 2.0 * a.real() + std::sqrt(2.0) * normal(rng);
      r.X2 = 2.0 * a.imag() + std::sqrt(2.0) * normal(rng);
      r.X3 = 2.0 * (std::polar(1.0, dphi + dyn.phi_target) * a_d).real() + normal(rng);
      r.dphi = dphi;
    }
  });
  return out;
}

void write_records(const RecordStream& records, std::ostream& out) {
  csv::write_header(out, {"t_index", "X1", "X2", "X3", "dphi"});
  for (const auto& r : records)
    out << r.t_index << ',' << csv::format(r.X1) << ',' << csv::format(r.X2) << ',' << csv::format(r.X3) << ','
        << csv::format(r.dphi) << '\n';
}

void write_records(const RecordStream& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_records: cannot open " + path.string());
  write_records(records, out);
}

RecordStream read_records(std::istream& in) {
  const auto t = csv::read(in);
  csv::require_header(t, {"t_index", "X1", "X2", "X3", "dphi"}, "read_records");
  RecordStream rs;
  rs.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    MultiChannelRecord r{static_cast<std::int64_t>(row[0]), row[1], row[2], row[3], row[4]};
    for (double v : row)
      if (!std::isfinite(v)) throw std::runtime_error("read_records: non-finite value");
    if (!rs.empty() && r.t_index <= rs.back().t_index)
      throw std::runtime_error("read_records: t_index must be strictly increasing");
    rs.push_back(r);
  }
  return rs;
}

RecordStream read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_records: cannot open " + path.string());
  return read_records(in);
}

void write_husimi(const HusimiHistogram& h, std::ostream& out) {
  csv::write_header(out, {"q_ps", "p_ps", "count"});
  const std::size_t np = h.spec.np();
  for (std::size_t i = 0; i < h.spec.nq(); ++i)
    for (std::size_t j = 0; j < np; ++j)
      out << csv::format(h.q_center(i)) << ',' << csv::format(h.p_center(j)) << ',' << h.counts[i * np + j] << '\n';
}

void write_husimi(const HusimiHistogram& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_husimi: cannot open " + path.string());
  write_husimi(h, out);
}

}  // namespace pomega
