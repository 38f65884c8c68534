#pragma once

// Run configuration for the command-line workflows: a JSON document with the
// sections tomography, selection, twa, fits and io. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pomega/analysis.hpp"
#include "pomega/homodyne.hpp"
#include "pomega/phasespace.hpp"
#include "pomega/tomography.hpp"
#include "pomega/twa.hpp"

namespace pomega {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TomographyConfig {
  double R = kDefaultFilterR;
  double q_min = -20.0, q_max = 20.0, p_min = -20.0, p_max = 20.0, step = 0.25;
  BinningGrid binning;
  EvaluationMode mode = EvaluationMode::cell_average;

  PhaseSpaceGrid grid() const { return {q_min, q_max, p_min, p_max, step}; }
};

struct SelectionConfig {
  std::vector<double> s_list{3.0, 5.0, 7.0, 9.0, 11.0};
  double w = 0.6;
  std::size_t filter_window = 4096;  // 0 disables the orthogonality filter
  double filter_margin = 0.025;
  double gate_lo = 0.0, gate_hi = 100.0;  // percentiles of sqrt(X1^2 + X2^2)
  std::size_t dphi_window = 0;           // 0 uses the recorded dphi column
};

struct TwaConfig {
  ModelParams params;
  std::size_t M = 100;
  double t_end = 1500.0;
  double t_step = 50.0;
  std::uint64_t seed = 1;
  std::vector<double> power_factors{0.8, 1.0, 1.3, 1.7};
  double p_thr = 0.0;  // 0: located by bisection on the coherence proxy
  double t_relax = 300.0;
  double sample_window = 300.0;
  bool bridge = false;

  /// 0, t_step/16, t_step/8, t_step/4, t_step/2, then multiples of t_step up to t_end.
  std::vector<double> t_grid() const;
};

struct FitsConfig {
  std::vector<DecayModel> models{std::begin(kAllDecayModels), std::end(kAllDecayModels)};
  bool weighted = false;
};

struct IoConfig {
  std::filesystem::path output_dir = "out";
};

struct RunConfig {
  std::uint64_t seed = 1;
  TomographyConfig tomography;
  SelectionConfig selection;
  TwaConfig twa;
  FitsConfig fits;
  IoConfig io;

  void validate() const;
};

RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

/// Name of the environment variable holding the default config path.
inline constexpr const char* kConfigEnvVar = "POMEGA_CONFIG";

/// Explicit path if given, else $POMEGA_CONFIG, else defaults.
RunConfig resolve_config(const std::optional<std::filesystem::path>& explicit_path);

}  // namespace pomega
