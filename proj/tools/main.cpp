#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "pomega/bridge.hpp"
#include "pomega/config.hpp"
#include "pomega/csv.hpp"
#include "pomega/homodyne.hpp"
#include "pomega/tomography.hpp"
#include "pomega/twa.hpp"
#include "pomega/workflow.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace pomega;

namespace {

// Usage errors detected after parsing map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::string> config;
  int jobs = 0;
  bool json = false;
  bool gnuplot = false;
  bool verbose = false;
};

RunConfig load(const Common& c) {
  return resolve_config(c.config ? std::optional<fs::path>(*c.config) : std::nullopt);
}

void emit(const Common& c, const ordered_json& j) {
  if (c.json) std::cout << j.dump() << '\n';
}

StateSpec make_state(const std::string& kind, double re, double im, double nbar, double kappa) {
  StateSpec s;
  const cplx a{re, im};
  if (kind == "vacuum") s = StateSpec::vacuum();
  else if (kind == "coherent") s = StateSpec::coherent(a);
  else if (kind == "thermal") s = StateSpec::thermal(nbar);
  else if (kind == "displaced_thermal") s = StateSpec::displaced_thermal(a, nbar);
  else if (kind == "phase_diffused") s = StateSpec::phase_diffused(a, nbar, kappa);
  else throw UsageError("unknown state '" + kind + "'");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return s;
}

std::size_t count_arg(double n) {
  if (!(n >= 1.0) || n != std::floor(n) || n > 1e12) throw UsageError("--n must be a positive integer");
  return static_cast<std::size_t>(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-space reconstruction, condensate simulation and coherence-time analysis"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "JSON run configuration (default: $POMEGA_CONFIG)");
  app.add_option("--jobs", common.jobs, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--json", common.json, "print a machine-readable summary on stdout");
  app.add_flag("--gnuplot", common.gnuplot, "also write gnuplot scripts next to CSV outputs");
  app.add_flag("-v,--verbose", common.verbose, "debug logging");

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic multi-channel records or quadratures");
  std::string state = "coherent", synth_out = "records.csv";
  double alpha_re = 3.0, alpha_im = 0.0, nbar = 0.0, kappa = 0.0, n_records = 1e5;
  std::uint64_t seed = 1;
  bool quadratures = false;
  RecordDynamics dyn;
  synth->add_option("--state", state, "vacuum|coherent|thermal|displaced_thermal|phase_diffused");
  synth->add_option("--alpha", alpha_re, "real part of the displacement");
  synth->add_option("--alpha-im", alpha_im, "imaginary part of the displacement");
  synth->add_option("--nbar", nbar, "thermal occupation");
  synth->add_option("--kappa", kappa, "phase-diffusion width (rad)");
  synth->add_option("--n", n_records, "number of records");
  synth->add_option("--seed", seed, "master seed");
  synth->add_option("-o,--out", synth_out, "output CSV");
  synth->add_flag("--quadratures", quadratures, "write (x, phi) quadrature pairs instead of records");
  synth->add_option("--delay", dyn.delay_ps, "target-channel delay (ps)");
  synth->add_option("--phase-diffusion", dyn.phase_diffusion, "phase diffusion D (rad^2/ps)");
  synth->add_option("--amp-relax", dyn.amplitude_relax, "amplitude relaxation rate (1/ps)");
  synth->add_option("--osc-hz", dyn.oscillation_hz, "amplitude modulation frequency (Hz)");
  synth->add_option("--mod-depth", dyn.modulation_depth, "amplitude modulation depth");

  // reconstruct
  auto* recon = app.add_subcommand("reconstruct", "postselect records and reconstruct P_Omega per (s, tau)");
  std::vector<std::string> rec_inputs;
  std::vector<double> rec_taus;
  std::string rec_dataset, recon_out = "out";
  recon->add_option("--records", rec_inputs, "record CSV files, one per delay");
  recon->add_option("--tau", rec_taus, "delay (ps) of each record file");
  recon->add_option("--dataset", rec_dataset, "reconstruct one field from an (x, phi) dataset instead");
  recon->add_option("-o,--out", recon_out, "output directory");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "TWA ensembles and Var(phi) series per pump power");
  std::string sim_out = "out", checkpoint, resume;
  std::vector<double> powers;
  double t_end = -1.0;
  sim_cmd->add_option("-o,--out", sim_out, "output directory");
  sim_cmd->add_option("--powers", powers, "override the pump factors relative to P_thr");
  sim_cmd->add_option("--t-end", t_end, "override the series length (ps)");
  sim_cmd->add_option("--checkpoint", checkpoint, "write the final ensemble of each power to this stem");
  sim_cmd->add_option("--resume", resume, "continue a single series from a checkpoint stem");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit decay models to Var(phi) series");
  std::vector<std::string> fit_inputs;
  std::vector<double> fit_powers;
  std::string fit_out = "fits.csv";
  bool weighted = false;
  fit_cmd->add_option("--series", fit_inputs, "series CSV files (t_ps,value,stderr)")->required();
  fit_cmd->add_option("--power", fit_powers, "power label of each series");
  fit_cmd->add_option("-o,--out", fit_out, "output table");
  fit_cmd->add_flag("--weighted", weighted, "weighted least squares and weighted mean tau");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "fit Var(phi) against delay for every s of reconstruct summaries");
  std::vector<std::string> sweep_inputs;
  std::vector<double> sweep_powers;
  std::string sweep_out = "sweep.csv";
  sweep_cmd->add_option("--summary", sweep_inputs, "summary CSV files from reconstruct")->required();
  sweep_cmd->add_option("--power", sweep_powers, "power label of each summary");
  sweep_cmd->add_option("-o,--out", sweep_out, "output table");
  sweep_cmd->add_flag("--weighted", weighted, "weighted least squares and weighted mean tau");

  // kernel
  auto* kernel_cmd = app.add_subcommand("kernel", "tabulate and validate the Wigner to P_Omega kernel K(r)");
  double kernel_R = kDefaultFilterR, kernel_rmax = 10.0;
  std::string kernel_out = "kernel";
  kernel_cmd->add_option("--R", kernel_R, "filter parameter");
  kernel_cmd->add_option("--r-max", kernel_rmax, "table extent");
  kernel_cmd->add_option("-o,--out", kernel_out, "output stem");

  // husimi
  auto* husimi_cmd = app.add_subcommand("husimi", "two-channel Husimi histogram of a record file");
  std::string husimi_in, husimi_out = "husimi.csv";
  husimi_cmd->add_option("--records", husimi_in, "record CSV")->required();
  husimi_cmd->add_option("-o,--out", husimi_out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(common.verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(spdlog::stderr_color_mt("pomega"));

  try {
    // a given config must be valid even for commands that do not read it
    if (common.config) load(common);
    if (*synth) {
      const auto n = count_arg(n_records);
      const auto st = make_state(state, alpha_re, alpha_im, nbar, kappa);
      if (quadratures) {
        write_dataset(synth_quadratures(st, n, seed), fs::path(synth_out));
      } else {
        try {
          dyn.validate();
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        write_records(synth_records(st, n, seed, dyn), fs::path(synth_out));
      }
      spdlog::info("synth: seed {}, {} {} written to {}", seed, n, quadratures ? "quadratures" : "records", synth_out);
      emit(common, {{"command", "synth"}, {"seed", seed}, {"count", n}, {"path", synth_out}});
      return 0;
    }

    if (*recon) {
      auto cfg = load(common);
      const fs::path dir = recon_out;
      fs::create_directories(dir);
      if (!rec_dataset.empty()) {
        const auto data = read_dataset(fs::path(rec_dataset));
        EstimateOptions opts;
        opts.mode = cfg.tomography.mode;
        opts.jobs = common.jobs;
        const auto field = estimate_field(bin_dataset(data, cfg.tomography.binning), cfg.tomography.grid(),
                                          FilterParam{cfg.tomography.R}, opts);
        write_field(field, dir / "field");
        const auto st = circular_stats(field);
        emit(common, {{"command", "reconstruct"}, {"n", data.size()}, {"var_phi", st.variance},
                      {"var_phi_err", st.variance_err}, {"mean_amp", st.mean_amplitude}});
        return 0;
      }
      if (rec_inputs.empty()) throw UsageError("reconstruct: need --records or --dataset");
      if (rec_taus.empty()) rec_taus.assign(rec_inputs.size(), 0.0);
      if (rec_taus.size() != rec_inputs.size()) throw UsageError("reconstruct: one --tau per --records file");
      std::vector<SummaryRow> rows;
      for (std::size_t i = 0; i < rec_inputs.size(); ++i) {
        const auto records = read_records(fs::path(rec_inputs[i]));
        const auto part = reconstruct_records(records, rec_taus[i], cfg, common.jobs, dir / "fields");
        rows.insert(rows.end(), part.begin(), part.end());
      }
      write_summary(rows, dir / "summary.csv");
      if (common.gnuplot) write_gnuplot(dir / "summary.gp", dir / "summary.csv", 2, 3, "tau (ps)", "Var(phi)");
      ordered_json j{{"command", "reconstruct"}, {"summary", (dir / "summary.csv").string()}};
      ordered_json arr = ordered_json::array();
      for (const auto& r : rows)
        arr.push_back({{"s", r.s}, {"tau_ps", r.tau_ps}, {"var_phi", r.var_phi}, {"n_kept", r.n_kept}});
      j["rows"] = arr;
      emit(common, j);
      return 0;
    }

    if (*sim_cmd) {
      auto cfg = load(common);
      auto& tw = cfg.twa;
      if (t_end >= 0.0) tw.t_end = t_end;
      if (!powers.empty()) tw.power_factors = powers;
      const fs::path dir = sim_out;
      fs::create_directories(dir);
      SeriesOptions sopts;
      sopts.mode = tw.bridge ? VarianceMode::bridge : VarianceMode::samples;
      sopts.R = FilterParam{cfg.tomography.R};
      sopts.jobs = common.jobs;
      ordered_json j{{"command", "simulate"}};
      if (!resume.empty()) {
        auto ens = read_checkpoint(fs::path(resume));
        Simulator sim(ens.params);
        const auto series = phase_variance_series(ens, sim, {}, tw.t_grid(), sopts);
        write_series(series, dir / "series_resumed.csv");
        if (!checkpoint.empty()) write_checkpoint(ens, fs::path(checkpoint));
        j["series"] = (dir / "series_resumed.csv").string();
        emit(common, j);
        return 0;
      }
      const double p_thr = resolve_threshold(tw, common.jobs);
      spdlog::info("simulate: P_thr = {:.4g}", p_thr);
      j["p_thr"] = p_thr;
      ordered_json out = ordered_json::array();
      for (double f : tw.power_factors) {
        auto run = run_coherence(tw, f, p_thr, sopts, common.jobs);
        const auto& series = run.series;
        const auto name = "series_P" + csv::format(f) + ".csv";
        write_series(series, dir / name);
        if (common.gnuplot)
          write_gnuplot(dir / ("series_P" + csv::format(f) + ".gp"), dir / name, 1, 2, "t (ps)", "Var(phi)");
        if (!checkpoint.empty())
          write_checkpoint(run.final_ensemble, fs::path(checkpoint + "_P" + csv::format(f)));
        out.push_back({{"power", f}, {"P0", run.P0}, {"series", (dir / name).string()},
                       {"n_mean", run.target.n_mean}, {"coherence_proxy", run.target.coherence},
                       {"prep_residual", run.prep_residual}, {"prep_converged", run.prep_converged}});
      }
      j["runs"] = out;
      emit(common, j);
      return 0;
    }

    if (*fit_cmd || *sweep_cmd) {
      auto cfg = load(common);
      cfg.fits.weighted = cfg.fits.weighted || weighted;
      std::vector<SweepRow> rows;
      if (*fit_cmd) {
        if (!fit_powers.empty() && fit_powers.size() != fit_inputs.size())
          throw UsageError("fit: one --power per --series file");
        for (std::size_t i = 0; i < fit_inputs.size(); ++i) {
          const auto series = read_series(fs::path(fit_inputs[i]));
          const auto part =
              fit_series(series, fit_powers.empty() ? std::nan("") : fit_powers[i], std::nan(""), cfg.fits);
          rows.insert(rows.end(), part.begin(), part.end());
        }
      } else {
        if (!sweep_powers.empty() && sweep_powers.size() != sweep_inputs.size())
          throw UsageError("sweep: one --power per --summary file");
        for (std::size_t i = 0; i < sweep_inputs.size(); ++i) {
          const auto part = fit_summary(read_summary(fs::path(sweep_inputs[i])),
                                        sweep_powers.empty() ? std::nan("") : sweep_powers[i], cfg.fits);
          rows.insert(rows.end(), part.begin(), part.end());
        }
      }
      const fs::path out = *fit_cmd ? fit_out : sweep_out;
      write_sweep(rows, out);
      ordered_json j{{"command", *fit_cmd ? "fit" : "sweep"}, {"table", out.string()}, {"rows", rows.size()}};
      if (cfg.fits.weighted) {
        const auto w = weighted_taus(rows);
        fs::path wp = out;
        wp.replace_extension(".weighted.csv");
        write_weighted(w, wp);
        ordered_json arr = ordered_json::array();
        for (const auto& r : w)
          arr.push_back({{"power", r.power}, {"model", to_string(r.model)}, {"tau_mean", r.tau.tau_mean},
                         {"tau_err", r.tau.tau_err}});
        j["weighted"] = arr;
      }
      if (common.gnuplot) {
        fs::path gp = out;
        gp.replace_extension(".gp");
        write_gnuplot(gp, out, 1, 4, "power", "tau_c (ps)");
      }
      emit(common, j);
      return 0;
    }

    if (*kernel_cmd) {
      const FilterParam R{kernel_R};
      const auto table = k_table_reduced(R, kernel_rmax);
      write_kernel_table(table, fs::path(kernel_out));
      emit(common, {{"command", "kernel"}, {"R", kernel_R}, {"max_rel_residual", table.validation.max_rel_residual},
                    {"normalization", table.normalization()}, {"normalization_truncated", table.normalization(false)}});
      return 0;
    }

    if (*husimi_cmd) {
      const auto h = husimi_histogram(read_records(fs::path(husimi_in)));
      write_husimi(h, fs::path(husimi_out));
      emit(common, {{"command", "husimi"}, {"total", h.total}, {"mean_q", h.mean[0]}, {"mean_p", h.mean[1]}});
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
