#include <cmath>
#include <sstream>

#include "doctest.h"
#include "pomega/homodyne.hpp"

using namespace pomega;

namespace {

MultiChannelRecord rec(std::int64_t t, double x1, double x2, double x3 = 0.0, double dphi = 0.0) {
  return {t, x1, x2, x3, dphi};
}

}  // namespace

TEST_SUITE("homodyne") {
  TEST_CASE("annulus selector") {
    const AnnulusSelector a{5.0, 0.6};
    CHECK(a.lower() == doctest::Approx(4.7));
    CHECK(a.upper() == doctest::Approx(5.3));
    CHECK(a.contains(4.7));
    CHECK(a.contains(5.3));
    CHECK_FALSE(a.contains(5.31));
    CHECK(AnnulusSelector{0.2, 0.6}.lower() == 0.0);
    CHECK_THROWS_AS((AnnulusSelector{5.0, 0.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AnnulusSelector{-1.0, 0.6}.validate()), std::invalid_argument);
  }

  TEST_CASE("orthogonality filter keeps near-zero products relative to the rolling range") {
    RecordStream r;
    // products: 0, 100, -100, 1, 4, 0.5
    r.push_back(rec(0, 0.0, 3.0));
    r.push_back(rec(1, 10.0, 10.0));
    r.push_back(rec(2, 10.0, -10.0));
    r.push_back(rec(3, 1.0, 1.0));
    r.push_back(rec(4, 2.0, 2.0));
    r.push_back(rec(5, 0.5, 1.0));
    const auto kept = orthogonality_filter(r, 10);
    // peak-to-peak 200 after record 2: margin 5
    REQUIRE(kept.size() == 4);
    CHECK(kept[0].t_index == 0);
    CHECK(kept[1].t_index == 3);
    CHECK(kept[2].t_index == 4);
    CHECK(kept[3].t_index == 5);
    // a short window forgets the large products
    const auto short_kept = orthogonality_filter(r, 2);
    CHECK(short_kept.size() == 2);
    CHECK_THROWS_AS(orthogonality_filter(r, 0), std::invalid_argument);
  }

  TEST_CASE("phase reconstruction") {
    CHECK(reconstruct_phase(rec(0, 1.0, 0.0)) == 0.0);
    CHECK(reconstruct_phase(rec(0, 0.0, 2.0)) == doctest::Approx(kPi / 2));
    CHECK(reconstruct_phase(rec(0, -1.0, -1e-300, 0.0, 0.0)) == doctest::Approx(kPi));
    CHECK(reconstruct_phase(rec(0, 0.0, -1.0, 0.0, 0.5)) == doctest::Approx(1.5 * kPi + 0.5));
    CHECK(reconstruct_phase(rec(0, 1.0, 0.0, 0.0, 7.0)) == doctest::Approx(7.0 - kTwoPi));
    CHECK_THROWS_AS(reconstruct_phase(rec(0, 0.0, 0.0)), std::invalid_argument);
  }

  TEST_CASE("postselection and the range gate") {
    RecordStream r;
    for (int i = 0; i < 100; ++i) r.push_back(rec(i, 0.1 * i + 0.05, 0.0, i, 0.0));
    const auto p = postselect(r, {5.0, 0.6});
    CHECK(p.retained == 6);  // radii 4.75 ... 5.25
    CHECK_FALSE(p.empty);
    CHECK(p.data.front().x == 47.0);
    const auto none = postselect(r, {50.0, 0.6});
    CHECK(none.empty);
    CHECK(none.retained == 0);
    const auto g = range_gate(r, 10.0, 90.0);
    CHECK(g.size() == 80);  // interpolated percentiles 1.04 and 8.96
    CHECK(range_gate(r, 0.0, 100.0).size() == 100);
    CHECK_THROWS_AS(range_gate(r, 50.0, 40.0), std::invalid_argument);
  }

  TEST_CASE("Husimi histogram counts and moments") {
    RecordStream r{rec(0, 1.0, 2.0), rec(1, 1.1, 2.1), rec(2, 100.0, 0.0)};
    const auto h = husimi_histogram(r);
    CHECK(h.total == 3);
    std::uint64_t in = 0;
    for (auto c : h.counts) in += c;
    CHECK(in == 2);
    CHECK(h.mean[0] == doctest::Approx((1.0 + 1.1 + 100.0) / 3));
    CHECK(h.spec.nq() == 240);
  }

  TEST_CASE("synthetic records: determinism, channel statistics and phase reference") {
    const auto a = synth_records(StateSpec::coherent({3.0, 0.0}), 50000, 2);
    CHECK(a == synth_records(StateSpec::coherent({3.0, 0.0}), 50000, 2));
    double m1 = 0, m2 = 0, v1 = 0;
    for (const auto& r : a) {
      m1 += r.X1;
      m2 += r.X2;
    }
    m1 /= a.size();
    m2 /= a.size();
    for (const auto& r : a) v1 += (r.X1 - m1) * (r.X1 - m1);
    v1 /= a.size();
    CHECK(m1 == doctest::Approx(6.0).epsilon(0.01));
    CHECK(std::abs(m2) < 0.05);
    CHECK(v1 == doctest::Approx(2.0).epsilon(0.03));
    // the phase reconstructed from the postselection channels tracks the target
    // channel: <X3 cos theta> = 3 <cos(reference error)>, about 3 exp(-1/36)
    double c = 0.0;
    for (const auto& r : a) c += r.X3 * std::cos(reconstruct_phase(r));
    CHECK(c / a.size() == doctest::Approx(3.0 * std::exp(-1.0 / 36.0)).epsilon(0.02));
    CHECK_THROWS_AS(synth_records(StateSpec::vacuum(), 0, 1), std::invalid_argument);
    RecordDynamics bad;
    bad.phase_diffusion = -1.0;
    CHECK_THROWS_AS(synth_records(StateSpec::vacuum(), 10, 1, bad), std::invalid_argument);
  }

  TEST_CASE("recover_dphi follows the recorded sweep for phase-random light") {
    const auto a = synth_records(StateSpec::phase_diffused({3.0, 0.0}, 0.0, 100.0), 40000, 5);
    const auto b = recover_dphi(a, 301);
    double err = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 500; i + 500 < a.size(); ++i, ++n) {
      err += std::abs(std::arg(std::polar(1.0, b[i].dphi - a[i].dphi)));
    }
    CHECK(err / n < 0.15);
  }

  TEST_CASE("record files round trip and reject bad input") {
    const auto a = synth_records(StateSpec::thermal(0.5), 500, 8);
    std::stringstream ss;
    write_records(a, ss);
    CHECK(read_records(ss) == a);
    std::stringstream bad("t_index,X1,X2,X3,dphi\n1,0,0,0,0\n0,0,0,0,0\n");
    CHECK_THROWS(read_records(bad));
    std::stringstream wrong("t,X1,X2,X3,dphi\n1,0,0,0,0\n");
    CHECK_THROWS(read_records(wrong));
  }
}
