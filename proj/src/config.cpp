#include "pomega/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace pomega {

namespace {

using nlohmann::json;
using Handlers = std::map<std::string, std::function<void(const json&)>>;

void apply(const json& j, const std::string& section, const Handlers& handlers) {
  if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("config: unknown key '" + section + "." + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
    }
  }
}

template <class T>
std::function<void(const json&)> set(T& target) {
  return [&target](const json& v) { target = v.get<T>(); };
}

const char* mode_name(EvaluationMode m) { return m == EvaluationMode::center ? "center" : "cell_average"; }

}  // namespace

std::vector<double> TwaConfig::t_grid() const {
  std::vector<double> g{0.0};
  for (double f : {0.0625, 0.125, 0.25, 0.5})
    if (f * t_step < t_end) g.push_back(f * t_step);
  const long n = std::lround(t_end / t_step);
  for (long i = 1; i <= n; ++i) g.push_back(static_cast<double>(i) * t_step);
  return g;
}

void RunConfig::validate() const {
  try {
    (void)FilterParam{tomography.R};
    (void)tomography.grid();
    tomography.binning.validate();
    if (selection.s_list.empty()) throw ConfigError("config: selection.s_list is empty");
    for (double s : selection.s_list) {
      const AnnulusSelector sel{s, selection.w};
      sel.validate();
    }
    if (!(selection.filter_margin > 0.0)) throw ConfigError("config: selection.filter_margin must be > 0");
    if (!(selection.gate_lo >= 0.0 && selection.gate_lo < selection.gate_hi && selection.gate_hi <= 100.0))
      throw ConfigError("config: need 0 <= gate_lo < gate_hi <= 100");
    twa.params.validate();
    if (twa.M < 2) throw ConfigError("config: twa.M must be >= 2");
    if (!(twa.t_step > 0.0) || !(twa.t_end >= 0.0)) throw ConfigError("config: bad twa time grid");
    if (twa.power_factors.empty()) throw ConfigError("config: twa.power_factors is empty");
    for (double f : twa.power_factors)
      if (!(f > 0.0)) throw ConfigError("config: power factors must be > 0");
    if (twa.p_thr < 0.0) throw ConfigError("config: twa.p_thr must be >= 0");
    if (fits.models.empty()) throw ConfigError("config: fits.models is empty");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  RunConfig c;
  auto& t = c.tomography;
  auto& s = c.selection;
  auto& w = c.twa;
  apply(root, "root",
        {{"seed", set(c.seed)},
         {"tomography",
          [&](const json& j) {
            apply(j, "tomography",
                  {{"R", set(t.R)},
                   {"q_min", set(t.q_min)},
                   {"q_max", set(t.q_max)},
                   {"p_min", set(t.p_min)},
                   {"p_max", set(t.p_max)},
                   {"step", set(t.step)},
                   {"x_min", set(t.binning.x_min)},
                   {"x_max", set(t.binning.x_max)},
                   {"x_width", set(t.binning.x_width)},
                   {"phi_width", set(t.binning.phi_width)},
                   {"phi_subdivisions", set(t.binning.phi_subdivisions)},
                   {"mode", [&](const json& v) {
                      const auto m = v.get<std::string>();
                      if (m == "center") t.mode = EvaluationMode::center;
                      else if (m == "cell_average") t.mode = EvaluationMode::cell_average;
                      else throw ConfigError("config: unknown tomography.mode '" + m + "'");
                    }}});
          }},
         {"selection",
          [&](const json& j) {
            apply(j, "selection",
                  {{"s_list", set(s.s_list)},
                   {"w", set(s.w)},
                   {"filter_window", set(s.filter_window)},
                   {"filter_margin", set(s.filter_margin)},
                   {"gate_lo", set(s.gate_lo)},
                   {"gate_hi", set(s.gate_hi)},
                   {"dphi_window", set(s.dphi_window)}});
          }},
         {"twa",
          [&](const json& j) {
            apply(j, "twa",
                  {{"params", [&](const json& v) {
                      try {
                        w.params = params_from_json(v.dump(), w.params);
                      } catch (const std::invalid_argument& e) {
                        throw ConfigError(std::string("config: twa.params: ") + e.what());
                      }
                    }},
                   {"M", set(w.M)},
                   {"t_end", set(w.t_end)},
                   {"t_step", set(w.t_step)},
                   {"seed", set(w.seed)},
                   {"power_factors", set(w.power_factors)},
                   {"p_thr", set(w.p_thr)},
                   {"t_relax", set(w.t_relax)},
                   {"sample_window", set(w.sample_window)},
                   {"bridge", set(w.bridge)}});
          }},
         {"fits",
          [&](const json& j) {
            apply(j, "fits",
                  {{"models", [&](const json& v) {
                      c.fits.models.clear();
                      for (const auto& m : v.get<std::vector<std::string>>()) {
                        try {
                          c.fits.models.push_back(parse_decay_model(m));
                        } catch (const std::invalid_argument& e) {
                          throw ConfigError(std::string("config: ") + e.what());
                        }
                      }
                    }},
                   {"weighted", set(c.fits.weighted)}});
          }},
         {"io", [&](const json& j) {
            apply(j, "io", {{"output_dir", [&](const json& v) { c.io.output_dir = v.get<std::string>(); }}});
          }}});
  c.validate();
  return c;
}

std::string config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  const auto& t = c.tomography;
  j["tomography"] = {{"R", t.R},
                     {"q_min", t.q_min},
                     {"q_max", t.q_max},
                     {"p_min", t.p_min},
                     {"p_max", t.p_max},
                     {"step", t.step},
                     {"x_min", t.binning.x_min},
                     {"x_max", t.binning.x_max},
                     {"x_width", t.binning.x_width},
                     {"phi_width", t.binning.phi_width},
                     {"phi_subdivisions", t.binning.phi_subdivisions},
                     {"mode", mode_name(t.mode)}};
  const auto& s = c.selection;
  j["selection"] = {{"s_list", s.s_list},         {"w", s.w},
                    {"filter_window", s.filter_window}, {"filter_margin", s.filter_margin},
                    {"gate_lo", s.gate_lo},       {"gate_hi", s.gate_hi},
                    {"dphi_window", s.dphi_window}};
  const auto& w = c.twa;
  j["twa"] = {{"params", nlohmann::ordered_json::parse(params_to_json(w.params))},
              {"M", w.M},
              {"t_end", w.t_end},
              {"t_step", w.t_step},
              {"seed", w.seed},
              {"power_factors", w.power_factors},
              {"p_thr", w.p_thr},
              {"t_relax", w.t_relax},
              {"sample_window", w.sample_window},
              {"bridge", w.bridge}};
  std::vector<std::string> models;
  for (auto m : c.fits.models) models.push_back(to_string(m));
  j["fits"] = {{"models", models}, {"weighted", c.fits.weighted}};
  j["io"] = {{"output_dir", c.io.output_dir.string()}};
  return j.dump(2);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path) return load_config(*explicit_path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config(env);
  RunConfig c;
  c.validate();
  return c;
}

}  // namespace pomega
