#pragma once

// Batch pipelines shared by the command-line tool and the regression tests.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "pomega/analysis.hpp"
#include "pomega/config.hpp"
#include "pomega/homodyne.hpp"

namespace pomega {

struct SummaryRow {
  double s = 0.0;
  double tau_ps = 0.0;
  double var_phi = 0.0;
  double var_phi_err = 0.0;
  double mean_amp = 0.0;
  double mean_amp_err = 0.0;
  std::size_t n_kept = 0;  // 0 flags an empty selection; the statistics are then NaN
};

inline constexpr const char* kSummaryHeader = "s,tau_ps,var_phi,var_phi_err,mean_amp,mean_amp_err,n_kept";

/// Filter, gate and postselect the records, then reconstruct P_Omega and its
/// circular statistics for every s in the selection config. Fields are written
/// to `field_dir` when given.
std::vector<SummaryRow> reconstruct_records(const RecordStream& records, double tau_ps, const RunConfig& cfg,
                                            int jobs = 0,
                                            const std::optional<std::filesystem::path>& field_dir = std::nullopt);

/// Threshold pump power: tw.p_thr when positive, else located on
/// [h, 4h] with h the homogeneous threshold.
double resolve_threshold(const TwaConfig& tw, int jobs = 0);

struct CoherenceRun {
  double power_factor = 0.0;
  double P0 = 0.0;
  InitPrepTarget target;
  double prep_residual = 0.0;
  bool prep_converged = true;  // false: the best-effort ensemble was used
  DecaySeries series;
  TrajectoryEnsemble final_ensemble;
};

/// Steady-state target, initial-state preparation and Var(phi) series of the
/// k = 0 mode at P0 = power_factor * p_thr.
CoherenceRun run_coherence(const TwaConfig& tw, double power_factor, double p_thr, const SeriesOptions& sopts,
                           int jobs = 0);

void write_summary(const std::vector<SummaryRow>& rows, std::ostream& out);
void write_summary(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary(const std::filesystem::path& path);

struct SweepRow {
  double power = 0.0;
  double s = 0.0;
  DecayModel model = DecayModel::exponential;
  double tau_c = 0.0;  // NaN when the fit failed
  double tau_c_err = 0.0;
  double weight = 0.0;  // postselected points behind the series
};

inline constexpr const char* kSweepHeader = "power,s,model,tau_c,tau_c_err";

/// One row per (s, model): Var(phi) against delay for each s, fitted with every
/// configured model. Failed fits are logged and reported as NaN rows.
std::vector<SweepRow> fit_summary(const std::vector<SummaryRow>& rows, double power, const FitsConfig& fits);

/// Fits one series with every configured model; failures give NaN rows.
std::vector<SweepRow> fit_series(const DecaySeries& series, double power, double s, const FitsConfig& fits);

void write_sweep(const std::vector<SweepRow>& rows, std::ostream& out);
void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct WeightedRow {
  double power = 0.0;
  DecayModel model = DecayModel::exponential;
  WeightedTau tau;
};

/// weighted_mean_tau over s for each (power, model), weighted by the number of
/// postselected points; failed fits are skipped.
std::vector<WeightedRow> weighted_taus(const std::vector<SweepRow>& rows);

void write_weighted(const std::vector<WeightedRow>& rows, const std::filesystem::path& path);

/// Ready-to-run gnuplot script plotting column `ycol` against `xcol` of a CSV.
void write_gnuplot(const std::filesystem::path& script, const std::filesystem::path& csv, int xcol, int ycol,
                   const std::string& xlabel, const std::string& ylabel);

}  // namespace pomega
