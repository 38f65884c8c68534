#pragma once

// Three-channel homodyne records: Husimi histogram of (X1, X2), intensity
// postselection on an annulus, target-phase reconstruction, and a synthetic
// record generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "pomega/tomography.hpp"

namespace pomega {

struct MultiChannelRecord {
  std::int64_t t_index = 0;
  double X1 = 0.0, X2 = 0.0, X3 = 0.0;
  double dphi = 0.0;  // relative LO phase between postselection and target channels

  bool operator==(const MultiChannelRecord&) const = default;
};
using RecordStream = std::vector<MultiChannelRecord>;

/// Closed annulus [max(0, s - w/2), s + w/2] in the (X1, X2) plane.
struct AnnulusSelector {
  double s = 0.0;
  double w = 0.6;

  void validate() const;
  double lower() const;
  double upper() const;
  bool contains(double radius) const { return radius >= lower() && radius <= upper(); }
};

struct HusimiBinSpec {
  double q_min = -30.0, q_max = 30.0;
  double p_min = -30.0, p_max = 30.0;
  double width = 0.25;

  std::size_t nq() const;
  std::size_t np() const;
};

struct HusimiHistogram {
  HusimiBinSpec spec;
  std::vector<std::uint64_t> counts;  // q-major: counts[iq * np + ip]
  std::uint64_t total = 0;            // all records, including those outside the bins
  std::array<double, 2> mean{};
  std::array<double, 3> cov{};  // (qq, qp, pp), sample covariance

  double q_center(std::size_t i) const { return spec.q_min + (static_cast<double>(i) + 0.5) * spec.width; }
  double p_center(std::size_t j) const { return spec.p_min + (static_cast<double>(j) + 0.5) * spec.width; }
};

/// Keeps records with |X1 X2| <= margin * (max - min of X1 X2 over the trailing
/// `window` records, the current one included). Order is preserved.
RecordStream orthogonality_filter(const RecordStream& records, std::size_t window, double margin = 0.025);

HusimiHistogram husimi_histogram(const RecordStream& records, const HusimiBinSpec& spec = {});

/// (dphi + atan2(X2, X1)) mod 2pi.
double reconstruct_phase(const MultiChannelRecord& r);

struct PostselectResult {
  QuadratureDataset data;
  std::size_t retained = 0;
  bool empty = true;
};

PostselectResult postselect(const RecordStream& records, const AnnulusSelector& sel);

/// Keeps records whose radius sqrt(X1^2 + X2^2) lies between the given
/// percentiles (0..100) of the radius distribution.
RecordStream range_gate(const RecordStream& records, double lo_percentile, double hi_percentile);

/// Re-estimates dphi from moving averages of X1 X3 and X2 X3 over a centred
/// window. The recovered angle absorbs the target-channel phase offset.
RecordStream recover_dphi(const RecordStream& records, std::size_t window);

/// Generator dynamics. The target channel is read a delay tau after the
/// postselection channels; during tau the latent amplitude picks up Wiener
/// phase noise (rate D) and its thermal part relaxes (rate lambda).
struct RecordDynamics {
  double delay_ps = 0.0;
  double phase_diffusion = 0.0;    // D in rad^2 / ps
  double amplitude_relax = 0.0;    // lambda in 1 / ps
  double oscillation_hz = 0.0;     // amplitude modulation frequency
  double modulation_depth = 0.0;   // m in (1 + m cos(2 pi f t))
  double rep_rate_hz = 75.4e6;     // pulse repetition rate
  double sweep_period = 4096.0;    // pulses per full triangle sweep of dphi
  double phi_target = 0.0;

  void validate() const;
};

/// Draws records: latent a = alpha0 e^{i theta} + zeta (theta wrapped normal
/// of width kappa, zeta complex Gaussian with E|zeta|^2 = nbar),
/// X1 = 2 Re a + N(0, 2), X2 = 2 Im a + N(0, 2),
/// X3 = 2 Re(e^{i(dphi + phi_target)} a') + N(0, 1) with a' the delayed amplitude.
RecordStream synth_records(const StateSpec& state, std::size_t n, std::uint64_t seed,
                           const RecordDynamics& dyn = {});

void write_records(const RecordStream& records, std::ostream& out);
void write_records(const RecordStream& records, const std::filesystem::path& path);
RecordStream read_records(std::istream& in);
RecordStream read_records(const std::filesystem::path& path);

void write_husimi(const HusimiHistogram& h, std::ostream& out);
void write_husimi(const HusimiHistogram& h, const std::filesystem::path& path);

}  // namespace pomega
