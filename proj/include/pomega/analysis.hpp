#pragma once

// Decay-time extraction from Var(phi)(t) and <|alpha|>(t) series.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pomega/phasespace.hpp"

namespace pomega {

struct DecaySeries {
  std::vector<double> times;  // ps, strictly increasing
  std::vector<double> values;
  std::vector<double> weights;  // optional; empty for unweighted
  std::vector<double> stderrs;  // optional; empty when unknown
  std::string label;

  void validate() const;
  std::size_t size() const { return times.size(); }
};

enum class DecayModel { exponential, gaussian, power, shifted_power };

std::string to_string(DecayModel m);
DecayModel parse_decay_model(const std::string& name);
inline constexpr DecayModel kAllDecayModels[] = {DecayModel::exponential, DecayModel::gaussian, DecayModel::power,
                                                 DecayModel::shifted_power};

/// Model forms (t0 = first time of the series):
///   exponential    a exp(-(t - t0)/tau) + d                      params a, tau, d
///   gaussian       a exp(-((t - t0)/tau)^2) + d                  params a, tau, d
///   power          a (1 + (t - t0)/theta)^(-beta) + d            params a, theta, beta, d
///   shifted_power  a (1 + max(0, t - ts)/theta)^(-beta) + d      params a, ts, theta, beta, d
/// The reported decay time is tau, or theta for the power-law forms.
std::vector<std::string> parameter_names(DecayModel m);
double model_value(DecayModel m, const std::vector<double>& params, double t, double t0);

struct FitResult {
  DecayModel model = DecayModel::exponential;
  std::vector<double> params;
  std::vector<double> stderrs;
  double residual_norm = 0.0;  // sqrt of the (weighted) residual sum of squares
  std::size_t n_points = 0;
  double t0 = 0.0;
  std::vector<double> residuals;  // value - model, per point

  double tau() const;
  double tau_err() const;
};

class DegenerateFitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class FitConvergenceError : public std::runtime_error {
public:
  FitConvergenceError(const std::string& what, FitResult best) : std::runtime_error(what), best_(std::move(best)) {}
  const FitResult& best() const { return best_; }

private:
  FitResult best_;
};

struct FitOptions {
  bool weighted = false;  // use series.weights as least-squares weights
  int max_evaluations = 20000;
};

FitResult fit_decay(const DecaySeries& series, DecayModel model, const FitOptions& opts = {});

struct ModelComparison {
  std::vector<FitResult> ranked;
  std::vector<std::pair<DecayModel, std::string>> failures;
};

/// Fits all four models and ranks them by residual norm. A model with more
/// parameters only ranks ahead of a simpler one when its lower residual passes
/// an F-test at level `significance`; otherwise the simpler model goes first.
ModelComparison compare_models(const DecaySeries& series, const FitOptions& opts = {}, double significance = 0.05);

struct WeightedTau {
  double tau_mean = 0.0;
  double tau_err = 0.0;
};

WeightedTau weighted_mean_tau(const std::vector<FitResult>& results, const std::vector<double>& weights);

/// Resultant and circular variance of sample phases; mean_amplitude is 1 and
/// variance_err is the standard error of 1 - |<e^{i phi}>|.
CircularStats circular_stats_from_phases(const std::vector<double>& phases);

}  // namespace pomega
