#pragma once

// Direct sampling of P_Omega from quadrature/phase data with the binned
// weighted-average pattern-function estimator.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "pomega/phasespace.hpp"

namespace pomega {

struct QuadratureSample {
  double x = 0.0;
  double phi = 0.0;  // [0, 2pi)

  bool operator==(const QuadratureSample&) const = default;
};
using QuadratureDataset = std::vector<QuadratureSample>;

/// Histogram cells. x centres sit at x_min + i * x_width; the phase circle is
/// split into an even number of bins (centres j * 2pi / n_phi) so that
/// phi -> phi + pi maps bins onto bins.
struct BinningGrid {
  double x_min = -20.0;
  double x_max = 20.0;
  double x_width = 1.0;
  double phi_width = 0.1;  // requested; the realised width is 2pi / n_phi()
  // in-cell moments are accumulated on this many phase sub-cells per bin
  std::size_t phi_subdivisions = 4;

  void validate() const;
  std::size_t n_x() const;
  std::size_t n_phi() const;
  double x_center(std::size_t i) const { return x_min + static_cast<double>(i) * x_width; }
  double phi_center(std::size_t j) const { return kTwoPi * static_cast<double>(j) / static_cast<double>(n_phi()); }
};

/// Count plus first and second moments of the offsets (x - x_c, phi - phi_c)
/// from the sub-cell centre.
struct HistogramCell {
  std::uint64_t count = 0;
  double sdx = 0.0, sdp = 0.0, sdx2 = 0.0, sdp2 = 0.0, sdxdp = 0.0;
};

struct BinnedHistogram {
  BinningGrid grid;
  std::vector<std::uint64_t> counts;  // N(x, phi), phi-major: counts[j * n_x + i]
  std::vector<HistogramCell> sub;     // sub[(j * n_sub + s) * n_x + i]
  std::uint64_t total = 0;
  std::uint64_t overflow = 0;  // samples with x outside [x_min, x_max], clamped

  std::uint64_t count(std::size_t i, std::size_t j) const { return counts[j * grid.n_x() + i]; }
  const HistogramCell& sub_cell(std::size_t i, std::size_t j, std::size_t s) const {
    return sub[(j * grid.phi_subdivisions + s) * grid.n_x() + i];
  }
  /// Phase centre of sub-cell s of bin j.
  double sub_center(std::size_t j, std::size_t s) const;
  std::uint64_t column_total(std::size_t j) const;
  std::size_t nonempty_columns() const;
};

BinnedHistogram bin_dataset(const QuadratureDataset& data, const BinningGrid& grid = {});

enum class EvaluationMode {
  center,  // pattern function at the cell centre
  // in-cell average: Gauss-Legendre over the phase spread of the cell's
  // samples, second-order correction for the remaining x spread
  cell_average,
};

struct EstimateOptions {
  EvaluationMode mode = EvaluationMode::cell_average;
  int jobs = 0;
  double node_density = 1.0;  // phase nodes per radian of pattern-argument sweep
};

QuasiProbabilityField estimate_field(const BinnedHistogram& hist, const PhaseSpaceGrid& grid, FilterParam R,
                                     const EstimateOptions& opts = {});

// --- synthetic data --------------------------------------------------------

struct StateSpec {
  enum class Kind { vacuum, coherent, thermal, displaced_thermal, phase_diffused };
  Kind kind = Kind::vacuum;
  cplx alpha0{};
  double nbar = 0.0;
  double kappa = 0.0;

  static StateSpec vacuum() { return {}; }
  static StateSpec coherent(cplx a) { return {Kind::coherent, a, 0.0, 0.0}; }
  static StateSpec thermal(double n) { return {Kind::thermal, {}, n, 0.0}; }
  static StateSpec displaced_thermal(cplx a, double n) { return {Kind::displaced_thermal, a, n, 0.0}; }
  static StateSpec phase_diffused(cplx a, double n, double k) { return {Kind::phase_diffused, a, n, k}; }

  void validate() const;
};

/// x ~ Normal(2 Re(e^{i phi} alpha), 2 nbar + 1), phi uniform. Samples are
/// drawn in fixed-size chunks with derived seeds, so the output depends only
/// on (state, n, seed).
QuadratureDataset synth_quadratures(const StateSpec& state, std::size_t n, std::uint64_t seed);

void write_dataset(const QuadratureDataset& data, std::ostream& out);
void write_dataset(const QuadratureDataset& data, const std::filesystem::path& path);
QuadratureDataset read_dataset(std::istream& in);
QuadratureDataset read_dataset(const std::filesystem::path& path);

}  // namespace pomega
