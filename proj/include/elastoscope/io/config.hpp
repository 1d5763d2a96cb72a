#pragma once

// Run configuration as JSON. Every key is optional; absent keys keep their
// defaults and an empty file is the default configuration. Unknown keys and
// type mismatches are rejected with the dotted key path in the message.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "elastoscope/core/error.hpp"
#include "elastoscope/evaluation.hpp"

namespace elastoscope::io {

using json = nlohmann::json;

struct RunConfig {
  SceneConfig scene;
  std::vector<double> strain_levels = {0.001, 0.005, 0.01, 0.02, 0.03, 0.05, 0.10};
  std::uint64_t seed = 0;
  int threads = 0;  // 0: ELASTOSCOPE_THREADS or the OpenMP default
  std::string output_dir = "out";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

/// Reads one JSON object, tracking which keys were consumed.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    return has(key) ? Section(obj_.at(key), key_path(key)) : Section(empty, key_path(key));
  }

  void real(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(key_path(key), "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(key_path(key), "must be finite");
  }

  void optional_real(const std::string& key, std::optional<double>& out) {
    if (!has(key)) return;
    if (obj_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    real(key, v);
    out = v;
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > std::numeric_limits<Int>::max()) throw ConfigError(key_path(key), "out of range");
        out = static_cast<Int>(u);
        return;
      }
      throw ConfigError(key_path(key), "must be non-negative");
    } else {
      const auto s = v.get<std::int64_t>();
      if (s < std::numeric_limits<Int>::min() || s > std::numeric_limits<Int>::max()) {
        throw ConfigError(key_path(key), "out of range");
      }
      out = static_cast<Int>(s);
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(key_path(key), "expected true or false");
    out = v.get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(key_path(key), "expected a string");
    out = v.get<std::string>();
  }

  /// Rejects unknown keys. Call after every expected key was requested.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
    }
  }

  /// Runs a validator and attributes its failure to this section, or to the
  /// key when the message starts with one of this section's key names.
  template <typename F>
  void check(F&& validate, std::initializer_list<std::string_view> keys = {}) const {
    try {
      validate();
    } catch (const InvalidArgument& e) {
      const std::string_view msg = e.what();
      const std::string_view head = msg.substr(0, msg.find(' '));
      for (std::string_view k : keys) {
        const std::string full = key_path(std::string(k));
        if (head == k || head == full) throw ConfigError(full, e.what());
      }
      throw ConfigError(path_, e.what());
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const RunConfig& c) {
  const SceneConfig& s = c.scene;
  json j;
  j["vessel"] = {{"inner_radius", s.vessel.inner_radius},
                 {"outer_radius", s.vessel.outer_radius},
                 {"center_depth", s.vessel.center_depth},
                 {"elastic_modulus", s.vessel.elastic_modulus},
                 {"poisson_ratio", s.vessel.poisson_ratio},
                 {"baseline_pressure", s.vessel.baseline_pressure}};
  j["phantom"] = {{"density_per_mm2", s.scatterers.density_per_mm2},
                  {"lumen_echogenicity", s.scatterers.lumen_echogenicity},
                  {"fov_margin", s.scatterer_margin}};
  j["array"] = {{"n_elements", s.array.n_elements},
                {"center_frequency", s.array.center_frequency},
                {"element_width", s.array.element_width},
                {"pitch", s.array.pitch},
                {"kerf", s.array.kerf},
                {"element_height", s.array.element_height},
                {"sampling_rate", s.array.sampling_rate},
                {"sound_speed", s.array.sound_speed},
                {"fractional_bandwidth", s.fractional_bandwidth},
                {"tx_decimation", s.tx_decimation},
                {"noise_snr_db", s.noise_snr_db ? json(*s.noise_snr_db) : json(nullptr)}};
  j["grid"] = {{"x0", s.grid.x0},   {"z0", s.grid.z0},     {"dx", s.grid.dx},
               {"dz", s.grid.dz},   {"rows", s.grid.rows}, {"cols", s.grid.cols},
               {"axial_oversampling", s.axial_oversampling}};
  j["beamform"] = {{"directivity", s.directivity}, {"dynamic_range_db", s.dynamic_range_db}};
  j["registration"] = {{"similarity", "ssd"},
                       {"levels", s.registration.levels},
                       {"mesh_spacing_px", s.registration.mesh_spacing_px},
                       {"regularization_weight", s.registration.regularization_weight},
                       {"max_iterations", s.registration.max_iterations},
                       {"tolerance", s.registration.tolerance},
                       {"initial_step", s.registration.initial_step},
                       {"annealing_rate", s.registration.annealing_rate},
                       {"input", s.registration_input == ImageStage::log ? "log" : "envelope"}};
  j["xcorr"] = {{"window_axial", s.xcorr.window_axial},
                {"window_lateral", s.xcorr.window_lateral},
                {"overlap", s.xcorr.overlap},
                {"search_axial", s.xcorr.search_axial},
                {"search_lateral", s.xcorr.search_lateral},
                {"rho_min", s.xcorr.rho_min},
                {"subsample", "parabolic"},
                {"adaptive", s.xcorr.adaptive}};
  j["evaluation"] = {{"erosion_px", s.erosion_px}};
  j["sweep"] = {{"strain_levels", c.strain_levels}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  return j;
}

inline RunConfig config_from_json(const json& root_json) {
  RunConfig c;
  SceneConfig& s = c.scene;
  detail::Section root(root_json, "");

  {
    auto v = root.child("vessel");
    v.real("inner_radius", s.vessel.inner_radius);
    v.real("outer_radius", s.vessel.outer_radius);
    v.real("center_depth", s.vessel.center_depth);
    v.real("elastic_modulus", s.vessel.elastic_modulus);
    v.real("poisson_ratio", s.vessel.poisson_ratio);
    v.real("baseline_pressure", s.vessel.baseline_pressure);
    v.finish();
    v.check([&] { s.vessel.validate(); }, {"poisson_ratio", "elastic_modulus"});
  }
  {
    auto p = root.child("phantom");
    p.real("density_per_mm2", s.scatterers.density_per_mm2);
    p.real("lumen_echogenicity", s.scatterers.lumen_echogenicity);
    p.real("fov_margin", s.scatterer_margin);
    p.finish();
    if (!(s.scatterers.density_per_mm2 > 0.0)) throw ConfigError("phantom.density_per_mm2", "must be positive");
    if (s.scatterers.lumen_echogenicity < 0.0) throw ConfigError("phantom.lumen_echogenicity", "must be non-negative");
    if (s.scatterer_margin < 0.0) throw ConfigError("phantom.fov_margin", "must be non-negative");
  }
  {
    auto a = root.child("array");
    a.integer("n_elements", s.array.n_elements);
    a.real("center_frequency", s.array.center_frequency);
    a.real("element_width", s.array.element_width);
    a.real("pitch", s.array.pitch);
    a.real("kerf", s.array.kerf);
    a.real("element_height", s.array.element_height);
    a.real("sampling_rate", s.array.sampling_rate);
    a.real("sound_speed", s.array.sound_speed);
    a.real("fractional_bandwidth", s.fractional_bandwidth);
    a.integer("tx_decimation", s.tx_decimation);
    a.optional_real("noise_snr_db", s.noise_snr_db);
    a.finish();
    a.check([&] { s.array.validate(); },
            {"n_elements", "center_frequency", "sampling_rate", "pitch", "element_width", "sound_speed"});
    if (!(s.fractional_bandwidth > 0.0 && s.fractional_bandwidth < 2.0)) {
      throw ConfigError("array.fractional_bandwidth", "must lie in (0, 2)");
    }
    if (s.tx_decimation < 1) throw ConfigError("array.tx_decimation", "must be at least 1");
  }
  {
    auto g = root.child("grid");
    g.real("x0", s.grid.x0);
    g.real("z0", s.grid.z0);
    g.real("dx", s.grid.dx);
    g.real("dz", s.grid.dz);
    g.integer("rows", s.grid.rows);
    g.integer("cols", s.grid.cols);
    g.integer("axial_oversampling", s.axial_oversampling);
    g.finish();
    g.check([&] { s.grid.validate(); });
    if (!(s.grid.z0 > 0.0)) throw ConfigError("grid.z0", "image must lie below the array (z0 > 0)");
    if (s.axial_oversampling < 1) throw ConfigError("grid.axial_oversampling", "must be at least 1");
  }
  {
    auto b = root.child("beamform");
    b.boolean("directivity", s.directivity);
    b.real("dynamic_range_db", s.dynamic_range_db);
    b.finish();
    if (!(s.dynamic_range_db > 0.0)) throw ConfigError("beamform.dynamic_range_db", "must be positive");
  }
  {
    auto r = root.child("registration");
    std::string similarity = "ssd";
    r.string("similarity", similarity);
    if (similarity != "ssd") throw ConfigError("registration.similarity", "only 'ssd' is supported");
    r.integer("levels", s.registration.levels);
    r.integer("mesh_spacing_px", s.registration.mesh_spacing_px);
    r.real("regularization_weight", s.registration.regularization_weight);
    r.integer("max_iterations", s.registration.max_iterations);
    r.real("tolerance", s.registration.tolerance);
    r.real("initial_step", s.registration.initial_step);
    r.real("annealing_rate", s.registration.annealing_rate);
    std::string input = "envelope";
    r.string("input", input);
    if (input != "envelope" && input != "log") {
      throw ConfigError("registration.input", "expected 'envelope' or 'log'");
    }
    s.registration_input = input == "log" ? ImageStage::log : ImageStage::envelope;
    r.finish();
    r.check([&] { s.registration.validate(); },
            {"levels", "mesh_spacing_px", "regularization_weight", "max_iterations", "tolerance",
             "initial_step", "annealing_rate"});
  }
  {
    auto x = root.child("xcorr");
    x.integer("window_axial", s.xcorr.window_axial);
    x.integer("window_lateral", s.xcorr.window_lateral);
    x.real("overlap", s.xcorr.overlap);
    x.integer("search_axial", s.xcorr.search_axial);
    x.integer("search_lateral", s.xcorr.search_lateral);
    x.real("rho_min", s.xcorr.rho_min);
    std::string subsample = "parabolic";
    x.string("subsample", subsample);
    if (subsample != "parabolic") throw ConfigError("xcorr.subsample", "only 'parabolic' is supported");
    x.boolean("adaptive", s.xcorr.adaptive);
    x.finish();
    x.check([&] { s.xcorr.validate(); });
  }
  {
    auto e = root.child("evaluation");
    e.integer("erosion_px", s.erosion_px);
    e.finish();
  }
  {
    auto w = root.child("sweep");
    if (w.has("strain_levels")) {
      const json& levels = root_json.at("sweep").at("strain_levels");
      if (!levels.is_array() || levels.empty()) {
        throw ConfigError("sweep.strain_levels", "expected a non-empty array of numbers");
      }
      c.strain_levels.clear();
      for (const auto& v : levels) {
        if (!v.is_number()) throw ConfigError("sweep.strain_levels", "expected numbers");
        const double f = v.get<double>();
        if (!(f > 0.0 && f <= 0.2)) throw ConfigError("sweep.strain_levels", "each level must lie in (0, 0.2]");
        c.strain_levels.push_back(f);
      }
    }
    w.finish();
  }
  root.integer("seed", c.seed);
  root.integer("threads", c.threads);
  root.string("output_dir", c.output_dir);
  root.finish();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return RunConfig{};
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << to_json(c).dump(2) << '\n';
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Pipeline stages in order. Each stage's outputs depend on the config
/// sections of that stage and every earlier one.
enum class Stage { phantom, rf, image, estimate, report };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::phantom: return "phantom";
    case Stage::rf: return "rf";
    case Stage::image: return "image";
    case Stage::estimate: return "estimate";
    case Stage::report: return "report";
  }
  return "unknown";
}

/// Hex digest of the settings that can change a stage's output. The seed,
/// thread count and output directory are excluded; the seed is recorded
/// separately.
inline std::string stage_hash(const RunConfig& c, Stage stage) {
  static const std::vector<std::vector<std::string>> sections = {
      {"vessel", "phantom", "grid"}, {"array"}, {"beamform"}, {"registration", "xcorr"},
      {"evaluation", "sweep"}};
  const json full = to_json(c);
  json j = json::object();
  for (std::size_t s = 0; s <= static_cast<std::size_t>(stage); ++s) {
    for (const auto& key : sections[s]) j[key] = full.at(key);
  }
  const std::uint64_t h = fnv1a(j.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Digest of every result-affecting setting.
inline std::string config_hash(const RunConfig& c) { return stage_hash(c, Stage::report); }

}  // namespace elastoscope::io
