#include <cmath>
#include <random>

#include "doctest.h"
#include "pomega/analysis.hpp"

using namespace pomega;

namespace {

DecaySeries sample(DecayModel m, const std::vector<double>& p, std::size_t n, double t_max, double noise,
                   unsigned seed, bool multiplicative = false) {
  DecaySeries s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t_max * static_cast<double>(i) / static_cast<double>(n - 1);
    const double v = model_value(m, p, t, 0.0);
    s.times.push_back(t);
    s.values.push_back(multiplicative ? v * (1.0 + noise * nd(rng)) : v + noise * nd(rng));
  }
  return s;
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("model names round trip") {
    for (auto m : kAllDecayModels) CHECK(parse_decay_model(to_string(m)) == m);
    CHECK_THROWS_AS(parse_decay_model("lorentzian"), std::invalid_argument);
    CHECK(parameter_names(DecayModel::shifted_power).size() == 5);
  }

  TEST_CASE("exact exponential data are recovered to 1e-8") {
    const auto s = sample(DecayModel::exponential, {0.8, 600.0, 0.2}, 50, 3000.0, 0.0, 1);
    const auto f = fit_decay(s, DecayModel::exponential);
    CHECK(f.params[0] == doctest::Approx(0.8).epsilon(1e-8));
    CHECK(f.tau() == doctest::Approx(600.0).epsilon(1e-8));
    CHECK(f.params[2] == doctest::Approx(0.2).epsilon(1e-8));
    CHECK(f.residual_norm < 1e-8);
    CHECK(f.n_points == 50);
  }

  TEST_CASE("rising series fit with a negative amplitude") {
    const auto s = sample(DecayModel::exponential, {-0.6, 250.0, 0.9}, 30, 1500.0, 0.0, 1);
    const auto f = fit_decay(s, DecayModel::exponential);
    CHECK(f.params[0] == doctest::Approx(-0.6).epsilon(1e-7));
    CHECK(f.tau() == doctest::Approx(250.0).epsilon(1e-7));
  }

  TEST_CASE("other model families recover their own exact data") {
    const auto g = sample(DecayModel::gaussian, {1.0, 400.0, 0.1}, 40, 1500.0, 0.0, 1);
    CHECK(fit_decay(g, DecayModel::gaussian).tau() == doctest::Approx(400.0).epsilon(1e-6));
    const auto p = sample(DecayModel::power, {1.0, 200.0, 1.5, 0.05}, 40, 3000.0, 0.0, 1);
    const auto fp = fit_decay(p, DecayModel::power);
    CHECK(fp.tau() == doctest::Approx(200.0).epsilon(1e-5));
    CHECK(fp.params[2] == doctest::Approx(1.5).epsilon(1e-5));
  }

  TEST_CASE("noisy recovery and standard errors") {
    int within = 0;
    for (unsigned seed = 0; seed < 20; ++seed) {
      const auto s = sample(DecayModel::exponential, {0.8, 600.0, 0.2}, 50, 3000.0, 0.02, seed, true);
      const auto f = fit_decay(s, DecayModel::exponential);
      CHECK(f.tau_err() > 0.0);
      if (std::abs(f.tau() - 600.0) < 30.0) ++within;
    }
    CHECK(within >= 18);
  }

  TEST_CASE("degenerate and short inputs are rejected") {
    DecaySeries flat;
    for (int i = 0; i < 10; ++i) {
      flat.times.push_back(i);
      flat.values.push_back(0.3);
    }
    CHECK_THROWS_AS(fit_decay(flat, DecayModel::exponential), DegenerateFitError);
    DecaySeries few{{0, 1, 2}, {1, 0.5, 0.25}, {}, {}, ""};
    CHECK_THROWS_AS(fit_decay(few, DecayModel::exponential), std::invalid_argument);
    DecaySeries unsorted{{0, 2, 1, 3}, {1, 0.5, 0.25, 0.1}, {}, {}, ""};
    CHECK_THROWS_AS(fit_decay(unsorted, DecayModel::exponential), std::invalid_argument);
    DecaySeries nonfinite{{0, 1, 2, 3}, {1, NAN, 0.25, 0.1}, {}, {}, ""};
    CHECK_THROWS_AS(fit_decay(nonfinite, DecayModel::exponential), std::invalid_argument);
  }

  TEST_CASE("model comparison picks the generating family") {
    const auto e = sample(DecayModel::exponential, {0.8, 600.0, 0.2}, 60, 3000.0, 0.02, 3);
    const auto ce = compare_models(e);
    REQUIRE_FALSE(ce.ranked.empty());
    CHECK(ce.ranked.front().model == DecayModel::exponential);
    const auto p = sample(DecayModel::power, {0.8, 100.0, 1.2, 0.1}, 60, 3000.0, 0.02, 3);
    const auto cp = compare_models(p);
    REQUIRE_FALSE(cp.ranked.empty());
    CHECK(cp.ranked.front().model == DecayModel::power);
    // uniform scaling does not change the ranking
    auto scaled = p;
    for (auto& v : scaled.values) v *= 7.5;
    const auto cs = compare_models(scaled);
    REQUIRE(cs.ranked.size() == cp.ranked.size());
    for (std::size_t i = 0; i < cs.ranked.size(); ++i) CHECK(cs.ranked[i].model == cp.ranked[i].model);
    DecaySeries five{{0, 1, 2, 3, 4}, {1, 0.5, 0.3, 0.2, 0.1}, {}, {}, ""};
    CHECK_THROWS_AS(compare_models(five), std::invalid_argument);
  }

  TEST_CASE("weighted mean of decay times") {
    FitResult a, b, c;
    a.params = {1, 500, 0};
    a.stderrs = {0, 10, 0};
    b.params = {1, 700, 0};
    b.stderrs = {0, 10, 0};
    c.params = {1, 10000, 0};
    c.stderrs = {0, 10, 0};
    CHECK(weighted_mean_tau({a, b}, {1, 1}).tau_mean == doctest::Approx(600.0));
    CHECK(weighted_mean_tau({a, b}, {1, 1}).tau_err == doctest::Approx(std::sqrt(200.0) / 2));
    CHECK(weighted_mean_tau({a, b, c}, {1, 1, 0}).tau_mean == doctest::Approx(600.0));
    CHECK(weighted_mean_tau({a, b}, {3, 1}).tau_mean == doctest::Approx(550.0));
    CHECK_THROWS_AS(weighted_mean_tau({a, b}, {1}), std::invalid_argument);
    CHECK_THROWS_AS(weighted_mean_tau({}, {}), std::invalid_argument);
  }

  TEST_CASE("circular statistics of phase samples") {
    const auto same = circular_stats_from_phases({0.3, 0.3, 0.3});
    CHECK(same.variance == doctest::Approx(0.0).scale(1.0));
    std::vector<double> uniform;
    for (int i = 0; i < 360; ++i) uniform.push_back(kTwoPi * i / 360.0);
    CHECK(circular_stats_from_phases(uniform).variance == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> spread;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(1.0, 0.5);
    for (int i = 0; i < 100000; ++i) spread.push_back(nd(rng));
    const auto st = circular_stats_from_phases(spread);
    // wrapped normal: 1 - exp(-sigma^2 / 2)
    CHECK(st.variance == doctest::Approx(1.0 - std::exp(-0.125)).epsilon(0.02));
    CHECK(std::arg(st.resultant) == doctest::Approx(1.0).epsilon(0.01));
    CHECK(st.variance_err > 0.0);
  }
}
