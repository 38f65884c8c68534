#include "pomega/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <spdlog/spdlog.h>
#include <unsupported/Eigen/NonLinearOptimization>

namespace pomega {

void DecaySeries::validate() const {
  if (times.size() != values.size()) throw std::invalid_argument("DecaySeries: times/values length mismatch");
  if (!weights.empty() && weights.size() != times.size())
    throw std::invalid_argument("DecaySeries: weights length mismatch");
  if (!stderrs.empty() && stderrs.size() != times.size())
    throw std::invalid_argument("DecaySeries: stderrs length mismatch");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || !std::isfinite(values[i]))
      throw std::invalid_argument("DecaySeries: non-finite entry");
    if (i > 0 && !(times[i] > times[i - 1])) throw std::invalid_argument("DecaySeries: times must increase strictly");
  }
  for (double w : weights)
    if (!(w >= 0.0)) throw std::invalid_argument("DecaySeries: weights must be >= 0");
}

std::string to_string(DecayModel m) {
  switch (m) {
    case DecayModel::exponential: return "exponential";
    case DecayModel::gaussian: return "gaussian";
    case DecayModel::power: return "power";
    case DecayModel::shifted_power: return "shifted_power";
  }
  return "?";
}

DecayModel parse_decay_model(const std::string& name) {
  for (auto m : kAllDecayModels)
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown decay model '" + name + "'");
}

std::vector<std::string> parameter_names(DecayModel m) {
  switch (m) {
    case DecayModel::exponential:
    case DecayModel::gaussian: return {"a", "tau", "d"};
    case DecayModel::power: return {"a", "theta", "beta", "d"};
    case DecayModel::shifted_power: return {"a", "ts", "theta", "beta", "d"};
  }
  return {};
}

double model_value(DecayModel m, const std::vector<double>& p, double t, double t0) {
  switch (m) {
    case DecayModel::exponential: return p[0] * std::exp(-(t - t0) / p[1]) + p[2];
    case DecayModel::gaussian: {
      const double u = (t - t0) / p[1];
      return p[0] * std::exp(-u * u) + p[2];
    }
    case DecayModel::power: return p[0] * std::pow(1.0 + (t - t0) / p[1], -p[2]) + p[3];
    case DecayModel::shifted_power: return p[0] * std::pow(1.0 + std::max(0.0, t - p[1]) / p[2], -p[3]) + p[4];
  }
  return 0.0;
}

double FitResult::tau() const { return model == DecayModel::shifted_power ? params[2] : params[1]; }
double FitResult::tau_err() const { return model == DecayModel::shifted_power ? stderrs[2] : stderrs[1]; }

namespace {

// Internal coordinates: positive scales (tau, theta, beta) enter as logarithms.
std::vector<bool> log_mask(DecayModel m) {
  switch (m) {
    case DecayModel::exponential:
    case DecayModel::gaussian: return {false, true, false};
    case DecayModel::power: return {false, true, true, false};
    case DecayModel::shifted_power: return {false, false, true, true, false};
  }
  return {};
}

std::vector<double> to_physical(DecayModel m, const Eigen::VectorXd& z) {
  const auto mask = log_mask(m);
  std::vector<double> p(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) p[i] = mask[i] ? std::exp(z[i]) : z[i];
  return p;
}

Eigen::VectorXd to_internal(DecayModel m, const std::vector<double>& p) {
  const auto mask = log_mask(m);
  Eigen::VectorXd z(static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) z[static_cast<Eigen::Index>(i)] = mask[i] ? std::log(p[i]) : p[i];
  return z;
}

struct Residuals {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  DecayModel model;
  const std::vector<double>* t;
  const std::vector<double>* y;
  std::vector<double> sw;  // sqrt of weights
  double t0;

  int inputs() const { return static_cast<int>(parameter_names(model).size()); }
  int values() const { return static_cast<int>(t->size()); }

  int operator()(const Eigen::VectorXd& z, Eigen::VectorXd& fvec) const {
    const auto p = to_physical(model, z);
    for (std::size_t i = 0; i < t->size(); ++i)
      fvec[static_cast<Eigen::Index>(i)] = sw[i] * (model_value(model, p, (*t)[i], t0) - (*y)[i]);
    return 0;
  }

  // derivatives with respect to the internal coordinates
  int df(const Eigen::VectorXd& z, Eigen::MatrixXd& J) const {
    const auto p = to_physical(model, z);
    for (std::size_t i = 0; i < t->size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double ti = (*t)[i];
      switch (model) {
        case DecayModel::exponential: {
          const double u = (ti - t0) / p[1];
          const double E = std::exp(-u);
          J(r, 0) = E;
          J(r, 1) = p[0] * E * u;
          J(r, 2) = 1.0;
          break;
        }
        case DecayModel::gaussian: {
          const double u = (ti - t0) / p[1];
          const double G = std::exp(-u * u);
          J(r, 0) = G;
          J(r, 1) = p[0] * G * 2.0 * u * u;
          J(r, 2) = 1.0;
          break;
        }
        case DecayModel::power: {
          const double v = (ti - t0) / p[1];
          const double B = 1.0 + v;
          const double P = std::pow(B, -p[2]);
          J(r, 0) = P;
          J(r, 1) = p[0] * p[2] * P * v / B;
          J(r, 2) = -p[0] * P * std::log(B) * p[2];
          J(r, 3) = 1.0;
          break;
        }
        case DecayModel::shifted_power: {
          const bool active = ti > p[1];
          const double v = active ? (ti - p[1]) / p[2] : 0.0;
          const double B = 1.0 + v;
          const double P = std::pow(B, -p[3]);
          J(r, 0) = P;
          J(r, 1) = active ? p[0] * p[3] * P / (p[2] * B) : 0.0;
          J(r, 2) = p[0] * p[3] * P * v / B;
          J(r, 3) = -p[0] * P * std::log(B) * p[3];
          J(r, 4) = 1.0;
          break;
        }
      }
      J.row(r) *= sw[i];
    }
    return 0;
  }
};

struct Attempt {
  Eigen::VectorXd z;
  double rss = std::numeric_limits<double>::infinity();
  bool ok = false;
};

std::vector<std::vector<double>> initial_guesses(DecayModel m, const DecaySeries& s) {
  const std::size_t n = s.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double d0 = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) d0 += s.values[i];
  d0 /= static_cast<double>(tail);
  double a0 = s.values.front() - d0;
  if (a0 == 0.0) a0 = 1e-3 * (std::abs(d0) + 1.0);
  const double t0 = s.times.front();
  const double span = s.times.back() - t0;
  double tau0 = 0.5 * span;
  for (std::size_t i = 1; i < n; ++i) {
    if ((s.values[i] - d0) / a0 <= std::exp(-1.0)) {
      if (s.times[i] > t0) tau0 = s.times[i] - t0;
      break;
    }
  }
  switch (m) {
    case DecayModel::exponential:
    case DecayModel::gaussian: return {{a0, tau0, d0}, {a0, 0.3 * tau0, d0}, {a0, 3.0 * tau0, d0}};
    case DecayModel::power: {
      std::vector<std::vector<double>> g;
      for (double beta : {1.0, 0.5, 2.0, 5.0}) g.push_back({a0, tau0 / beta, beta, d0});
      return g;
    }
    case DecayModel::shifted_power: {
      std::vector<std::vector<double>> g;
      for (double beta : {1.0, 0.5, 2.0, 5.0}) g.push_back({a0, t0, tau0 / beta, beta, d0});
      for (double beta : {1.0, 3.0}) g.push_back({a0, t0 + 0.1 * span, 0.5 * tau0 / beta, beta, d0});
      return g;
    }
  }
  return {};
}

}  // namespace

FitResult fit_decay(const DecaySeries& series, DecayModel model, const FitOptions& opts) {
  series.validate();
  const std::size_t n = series.size();
  const std::size_t np = parameter_names(model).size();
  if (n < 4 || n <= np)
    throw std::invalid_argument("fit_decay: need at least 4 points and more points than parameters");
  double mean = 0.0;
  for (double v : series.values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : series.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  if (var < 1e-12) throw DegenerateFitError("fit_decay: series is flat (sample variance < 1e-12)");
  if (opts.weighted && series.weights.empty()) throw std::invalid_argument("fit_decay: weighted fit without weights");

  Residuals f{model, &series.times, &series.values, std::vector<double>(n, 1.0), series.times.front()};
  if (opts.weighted)
    for (std::size_t i = 0; i < n; ++i) f.sw[i] = std::sqrt(series.weights[i]);

  Attempt best;
  for (const auto& guess : initial_guesses(model, series)) {
    Eigen::VectorXd z = to_internal(model, guess);
    Eigen::LevenbergMarquardt<Residuals> lm(f);
    lm.parameters.ftol = 1e-15;
    lm.parameters.xtol = 1e-15;
    lm.parameters.maxfev = opts.max_evaluations;
    const auto status = lm.minimize(z);
    Eigen::VectorXd r(static_cast<Eigen::Index>(n));
    f(z, r);
    const double rss = r.squaredNorm();
    if (!std::isfinite(rss) || !z.allFinite()) continue;
    const bool ok = status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters &&
                    status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation;
    if ((ok && !best.ok) || ((ok == best.ok) && rss < best.rss)) best = {z, rss, ok};
  }

  FitResult res;
  res.model = model;
  res.n_points = n;
  res.t0 = f.t0;
  if (best.z.size() == 0) throw FitConvergenceError("fit_decay: no finite iterate for " + to_string(model), res);
  res.params = to_physical(model, best.z);
  res.residual_norm = std::sqrt(best.rss);
  for (std::size_t i = 0; i < n; ++i)
    res.residuals.push_back(series.values[i] - model_value(model, res.params, series.times[i], f.t0));

  // covariance s^2 (J^T J)^-1 in internal coordinates, mapped to physical ones
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(np));
  f.df(best.z, J);
  const Eigen::MatrixXd JtJ = J.transpose() * J;
  const double s2 = best.rss / static_cast<double>(n - np);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(JtJ);
  const auto mask = log_mask(model);
  res.stderrs.assign(np, std::numeric_limits<double>::infinity());
  if (lu.isInvertible()) {
    const Eigen::MatrixXd cov = s2 * lu.inverse();
    for (std::size_t k = 0; k < np; ++k) {
      const double sz = std::sqrt(std::max(0.0, cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k))));
      res.stderrs[k] = mask[k] ? res.params[k] * sz : sz;
    }
  }
  if (!best.ok) throw FitConvergenceError("fit_decay: " + to_string(model) + " fit did not converge", res);
  return res;
}

ModelComparison compare_models(const DecaySeries& series, const FitOptions& opts, double significance) {
  if (series.size() < 6) throw std::invalid_argument("compare_models: need at least 6 points");
  ModelComparison out;
  std::vector<FitResult> fits;
  for (auto m : kAllDecayModels) {
    try {
      fits.push_back(fit_decay(series, m, opts));
    } catch (const std::exception& e) {
      spdlog::warn("compare_models: {} fit failed: {}", to_string(m), e.what());
      out.failures.emplace_back(m, e.what());
    }
  }
  std::stable_sort(fits.begin(), fits.end(),
                   [](const FitResult& a, const FitResult& b) { return a.residual_norm < b.residual_norm; });
  const double n = static_cast<double>(series.size());
  // true when `rich` fits significantly better than the smaller model `lean`
  const auto significant = [&](const FitResult& rich, const FitResult& lean) {
    const double pr = static_cast<double>(rich.params.size()), pl = static_cast<double>(lean.params.size());
    const double rss_r = rich.residual_norm * rich.residual_norm;
    const double rss_l = lean.residual_norm * lean.residual_norm;
    if (rss_r <= 0.0) return rss_l > 0.0;
    const double F = ((rss_l - rss_r) / (pr - pl)) / (rss_r / (n - pr));
    const boost::math::fisher_f dist(pr - pl, n - pr);
    return F > boost::math::quantile(boost::math::complement(dist, significance));
  };
  while (!fits.empty()) {
    std::size_t pick = 0;
    for (std::size_t k = 1; k < fits.size(); ++k)
      if (fits[k].params.size() < fits[pick].params.size() && !significant(fits[pick], fits[k])) pick = k;
    out.ranked.push_back(std::move(fits[pick]));
    fits.erase(fits.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

WeightedTau weighted_mean_tau(const std::vector<FitResult>& results, const std::vector<double>& weights) {
  if (results.size() != weights.size()) throw std::invalid_argument("weighted_mean_tau: length mismatch");
  if (results.empty()) throw std::invalid_argument("weighted_mean_tau: no results");
  double sw = 0.0, swt = 0.0, sw2e2 = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const double w = weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("weighted_mean_tau: weights must be >= 0");
    if (w == 0.0) continue;
    sw += w;
    swt += w * results[i].tau();
    const double e = results[i].stderrs.empty() ? 0.0 : results[i].tau_err();
    sw2e2 += w * w * e * e;
  }
  if (sw == 0.0) throw std::invalid_argument("weighted_mean_tau: all weights are zero");
  return {swt / sw, std::sqrt(sw2e2) / sw};
}

CircularStats circular_stats_from_phases(const std::vector<double>& phases) {
  if (phases.empty()) throw std::invalid_argument("circular_stats_from_phases: no phases");
  cplx sum{};
  for (double p : phases) {
    if (!std::isfinite(p)) throw std::invalid_argument("circular_stats_from_phases: non-finite phase");
    sum += std::polar(1.0, p);
  }
  const double n = static_cast<double>(phases.size());
  CircularStats st;
  st.resultant = sum / n;
  const double r = std::abs(st.resultant);
  st.variance = 1.0 - r;
  st.mean_amplitude = 1.0;
  if (phases.size() > 1) {
    const double mu = std::arg(st.resultant);
    double ss = 0.0;
    for (double p : phases) {
      const double c = std::cos(p - mu) - r;
      ss += c * c;
    }
    st.variance_err = std::sqrt(ss / (n - 1.0) / n);
  }
  return st;
}

}  // namespace pomega
