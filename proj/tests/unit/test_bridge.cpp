#include <cmath>
#include <complex>

#include "doctest.h"
#include "oracles.hpp"
#include "pomega/bridge.hpp"

using namespace pomega;

namespace {

// K(r) = (4/pi) int_0^{2R} db b J0(2 b r) e^{b^2/2} g(b/2R) with g from its integral form.
double k_oracle(double r, double R) {
  auto f = [&](double b) {
    return b * std::cyl_bessel_j(0.0, 2.0 * b * r) * std::exp(0.5 * b * b) * oracle::g_integral(b / (2.0 * R));
  };
  return 4.0 / M_PI * oracle::simpson(f, 0.0, 2.0 * R, 1e-11);
}

}  // namespace

TEST_SUITE("bridge") {
  TEST_CASE("reduced kernel against an independent quadrature") {
    const FilterParam R{0.7};
    for (double r : {0.0, 0.3, 1.0, 2.5, 6.0}) {
      const double want = k_oracle(r, 0.7);
      CHECK(k_reduced(r, R) == doctest::Approx(want).epsilon(1e-7).scale(0.2));
    }
    CHECK(k_reduced(0.0, R) == doctest::Approx(0.20354992749).epsilon(1e-9));
  }

  TEST_CASE("derivative matches a central difference") {
    const FilterParam R{0.7};
    const double h = 1e-4;
    for (double r : {0.4, 1.7, 3.2}) {
      const double fd = (k_reduced(r + h, R) - k_reduced(r - h, R)) / (2 * h);
      CHECK(k_reduced(r, R, 1) == doctest::Approx(fd).epsilon(1e-6).scale(0.2));
    }
  }

  TEST_CASE("table agrees with the brute-force integral") {
    const auto table = k_table_reduced(FilterParam{0.7}, 8.0);
    CHECK(table.validation.max_rel_residual < 1e-3);
    const auto bf = k_table_bruteforce(FilterParam{0.7}, {0.25, 1.5});
    CHECK(bf.max_imag < 1e-8);
    CHECK(table(0.25) == doctest::Approx(bf.values[0]).epsilon(1e-3));
    CHECK(table(1.5) == doctest::Approx(bf.values[1]).epsilon(1e-3).scale(0.2));
  }

  TEST_CASE("table interpolation and fallback") {
    const FilterParam R{0.5};
    const RadialKernelTable table(R, 4.0);
    for (double r : {0.013, 1.111, 3.977})
      CHECK(table(r) == doctest::Approx(k_reduced(r, R)).epsilon(1e-7).scale(0.1));
    CHECK(table(9.3) == doctest::Approx(k_reduced(9.3, R)).epsilon(1e-12));
    CHECK_THROWS_AS(RadialKernelTable(R, -1.0), std::invalid_argument);
  }

  TEST_CASE("normalization with the Omega tail") {
    const RadialKernelTable table(FilterParam{0.7}, 20.0);
    CHECK(table.normalization() == doctest::Approx(1.0).epsilon(0.005));
    CHECK(table.normalization(false) < 0.99);
  }

  TEST_CASE("vacuum samples convolve to Omega") {
    // symmetric-order vacuum: <|alpha|^2> = 1/2
    const auto z = oracle::complex_normals(40000, 0.25, 17);
    const FilterParam R{0.7};
    const auto table = k_table_reduced(R, 12.0);
    const auto grid = PhaseSpaceGrid::square(3.0, 0.5);
    const auto f = convolve_samples(z, table, grid, 1);
    REQUIRE(f.has_sigma());
    int bad = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double want = oracle::omega(std::abs(grid.alpha(i)), 0.7);
      if (std::abs(f.values[i] - want) > 5.0 * f.sigmas[i]) ++bad;
    }
    CHECK(bad == 0);
    CHECK(f.meta.n_samples == 40000);
  }

  TEST_CASE("gaussianity ratio") {
    CHECK(wigner_gaussianity_ratio(oracle::complex_normals(200000, 1.0, 3)) == doctest::Approx(2.0).epsilon(0.02));
    std::vector<cplx> ring;
    for (int k = 0; k < 1000; ++k) ring.push_back(std::polar(2.0, 2.0 * M_PI * k / 1000.0));
    CHECK(wigner_gaussianity_ratio(ring) == doctest::Approx(1.0).epsilon(1e-9));
  }
}
