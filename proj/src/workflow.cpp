#include "pomega/workflow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "pomega/csv.hpp"
#include "pomega/tomography.hpp"

namespace pomega {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string tag(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::ofstream open_out(const std::filesystem::path& path, const char* who) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(std::string(who) + ": cannot open " + path.string());
  return out;
}

}  // namespace

double resolve_threshold(const TwaConfig& tw, int jobs) {
  if (tw.p_thr > 0.0) return tw.p_thr;
  ThresholdOptions to;
  to.M = tw.M;
  to.seed = tw.seed;
  to.t_relax = tw.t_relax;
  to.window = tw.sample_window;
  to.jobs = jobs;
  const double h = tw.params.homogeneous_threshold();
  return locate_threshold(tw.params, h, 4.0 * h, to);
}

CoherenceRun run_coherence(const TwaConfig& tw, double power_factor, double p_thr, const SeriesOptions& sopts,
                           int jobs) {
  CoherenceRun run;
  run.power_factor = power_factor;
  ModelParams p = tw.params;
  p.P0 = power_factor * p_thr;
  run.P0 = p.P0;
  run.target = steady_state_target(p, tw.M, tw.seed, tw.t_relax, {}, jobs, tw.sample_window);
  PrepOptions po;
  po.M = tw.M;
  po.seed = tw.seed;
  po.jobs = jobs;
  PreparedEnsemble prepared;
  try {
    prepared = prepare_initial_state(run.target, p, po);
  } catch (const PreparationError& e) {
    spdlog::warn("P0 = {:.4g}: {}; continuing with the best-effort ensemble", p.P0, e.what());
    prepared = *e.best;
    run.prep_converged = false;
  }
  run.prep_residual = prepared.residual;
  Simulator sim(p);
  run.series = phase_variance_series(prepared.ensemble, sim, {}, tw.t_grid(), sopts);
  run.final_ensemble = std::move(prepared.ensemble);
  spdlog::info("P0 = {:.4g}: n = {:.4g}, proxy = {:.3f}, prep residual {:.2e}", p.P0, run.target.n_mean,
               run.target.coherence, run.prep_residual);
  return run;
}

std::vector<SummaryRow> reconstruct_records(const RecordStream& records, double tau_ps, const RunConfig& cfg, int jobs,
                                            const std::optional<std::filesystem::path>& field_dir) {
  const auto& sel = cfg.selection;
  RecordStream work = records;
  if (sel.dphi_window > 0) work = recover_dphi(work, sel.dphi_window);
  if (sel.filter_window > 0) work = orthogonality_filter(work, sel.filter_window, sel.filter_margin);
  if (sel.gate_lo > 0.0 || sel.gate_hi < 100.0) work = range_gate(work, sel.gate_lo, sel.gate_hi);
  spdlog::info("reconstruct: tau = {} ps, {} of {} records after filtering", tau_ps, work.size(), records.size());

  const auto grid = cfg.tomography.grid();
  const FilterParam R{cfg.tomography.R};
  EstimateOptions opts;
  opts.mode = cfg.tomography.mode;
  opts.jobs = jobs;
  std::vector<SummaryRow> rows;
  for (double s : sel.s_list) {
    SummaryRow row;
    row.s = s;
    row.tau_ps = tau_ps;
    const auto ps = postselect(work, {s, sel.w});
    row.n_kept = ps.retained;
    if (ps.empty) {
      row.var_phi = row.var_phi_err = row.mean_amp = row.mean_amp_err = kNaN;
      rows.push_back(row);
      continue;
    }
    const auto hist = bin_dataset(ps.data, cfg.tomography.binning);
    auto field = estimate_field(hist, grid, R, opts);
    field.meta.s = s;
    field.meta.w = sel.w;
    field.meta.tau_ps = tau_ps;
    const auto st = circular_stats(field);
    row.var_phi = st.variance;
    row.var_phi_err = st.variance_err;
    row.mean_amp = st.mean_amplitude;
    row.mean_amp_err = st.mean_amplitude_err;
    if (field_dir) {
      std::filesystem::create_directories(*field_dir);
      write_field(field, *field_dir / ("field_s" + tag(s) + "_tau" + tag(tau_ps)));
    }
    rows.push_back(row);
  }
  return rows;
}

void write_summary(const std::vector<SummaryRow>& rows, std::ostream& out) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << csv::format(r.s) << ',' << csv::format(r.tau_ps) << ',' << csv::format(r.var_phi) << ','
        << csv::format(r.var_phi_err) << ',' << csv::format(r.mean_amp) << ',' << csv::format(r.mean_amp_err) << ','
        << r.n_kept << '\n';
}

void write_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path, "write_summary");
  write_summary(rows, out);
}

std::vector<SummaryRow> read_summary(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, {"s", "tau_ps", "var_phi", "var_phi_err", "mean_amp", "mean_amp_err", "n_kept"},
                      "read_summary");
  std::vector<SummaryRow> rows;
  for (const auto& r : t.rows)
    rows.push_back({r[0], r[1], r[2], r[3], r[4], r[5], static_cast<std::size_t>(std::llround(r[6]))});
  return rows;
}

std::vector<SweepRow> fit_series(const DecaySeries& series, double power, double s, const FitsConfig& fits) {
  FitOptions opts;
  opts.weighted = fits.weighted;
  std::vector<SweepRow> out;
  double weight = 0.0;
  for (double w : series.weights) weight += w;
  for (auto m : fits.models) {
    SweepRow row{power, s, m, kNaN, kNaN, weight};
    try {
      const auto f = fit_decay(series, m, opts);
      row.tau_c = f.tau();
      row.tau_c_err = f.tau_err();
    } catch (const std::exception& e) {
      spdlog::warn("fit: power {} s {} model {}: {}", power, s, to_string(m), e.what());
    }
    out.push_back(row);
  }
  return out;
}

std::vector<SweepRow> fit_summary(const std::vector<SummaryRow>& rows, double power, const FitsConfig& fits) {
  std::map<double, std::vector<const SummaryRow*>> by_s;
  for (const auto& r : rows) by_s[r.s].push_back(&r);
  std::vector<SweepRow> out;
  for (auto& [s, group] : by_s) {
    std::sort(group.begin(), group.end(), [](auto a, auto b) { return a->tau_ps < b->tau_ps; });
    DecaySeries series;
    series.label = "var_phi";
    for (const auto* r : group) {
      if (r->n_kept == 0 || !std::isfinite(r->var_phi)) continue;
      series.times.push_back(r->tau_ps);
      series.values.push_back(r->var_phi);
      series.weights.push_back(static_cast<double>(r->n_kept));
      series.stderrs.push_back(r->var_phi_err);
    }
    if (series.size() == 0) {
      for (auto m : fits.models) out.push_back({power, s, m, kNaN, kNaN, 0.0});
      spdlog::warn("fit: power {} s {}: no nonempty delays", power, s);
      continue;
    }
    const auto part = fit_series(series, power, s, fits);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void write_sweep(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << kSweepHeader << '\n';
  for (const auto& r : rows)
    out << csv::format(r.power) << ',' << csv::format(r.s) << ',' << to_string(r.model) << ','
        << csv::format(r.tau_c) << ',' << csv::format(r.tau_c_err) << '\n';
}

void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path, "write_sweep");
  write_sweep(rows, out);
}

std::vector<WeightedRow> weighted_taus(const std::vector<SweepRow>& rows) {
  std::map<std::pair<double, int>, std::pair<std::vector<FitResult>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (!std::isfinite(r.tau_c)) continue;
    FitResult f;
    f.model = r.model;
    f.params = {0.0, r.tau_c, 0.0, 0.0, 0.0};
    f.stderrs = {0.0, r.tau_c_err, 0.0, 0.0, 0.0};
    if (r.model == DecayModel::shifted_power) {
      f.params = {0.0, 0.0, r.tau_c, 0.0, 0.0};
      f.stderrs = {0.0, 0.0, r.tau_c_err, 0.0, 0.0};
    }
    auto& g = groups[{r.power, static_cast<int>(r.model)}];
    g.first.push_back(f);
    g.second.push_back(r.weight);
  }
  std::vector<WeightedRow> out;
  for (const auto& [key, g] : groups) {
    try {
      out.push_back({key.first, static_cast<DecayModel>(key.second), weighted_mean_tau(g.first, g.second)});
    } catch (const std::exception& e) {
      spdlog::warn("weighted mean: power {}: {}", key.first, e.what());
    }
  }
  return out;
}

void write_weighted(const std::vector<WeightedRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path, "write_weighted");
  out << "power,model,tau_mean,tau_err\n";
  for (const auto& r : rows)
    out << csv::format(r.power) << ',' << to_string(r.model) << ',' << csv::format(r.tau.tau_mean) << ','
        << csv::format(r.tau.tau_err) << '\n';
}

void write_gnuplot(const std::filesystem::path& script, const std::filesystem::path& csv_path, int xcol, int ycol,
                   const std::string& xlabel, const std::string& ylabel) {
  auto out = open_out(script, "write_gnuplot");
  out << "set datafile separator ','\n"
      << "set key autotitle columnhead\n"
      << "set xlabel '" << xlabel << "'\n"
      << "set ylabel '" << ylabel << "'\n"
      << "plot '" << csv_path.filename().string() << "' using " << xcol << ':' << ycol << " with linespoints\n"
      << "pause -1\n";
}

}  // namespace pomega
