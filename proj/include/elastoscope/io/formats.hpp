#pragma once

// On-disk formats.
//
//   SARF   RF channel data. Little-endian header
//            magic "SARF", version u32, N u32, S u32, fs f64, t0 f64, f0 f64, c f64
//          then N*N*S float32 samples in [tx][rx][sample] order. Transmit rows
//          that were not fired are written as zeros and dropped on read.
//   grid   <base>.f32 holds named float32 planes (rows x cols, row-major, in
//          sidecar order); <base>.json carries geometry, plane names, metadata.
//   CSV    scatterers (x_m, z_m, amplitude), fields (x_m, z_m, ux_m, uz_m,
//          valid), sweep reports. Reals are written with 17 significant digits.
//   P5     8-bit binary graymap of a log-compressed image, 0 dB -> 255,
//          -range -> 0, linear in dB.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "elastoscope/beamformer.hpp"
#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"
#include "elastoscope/evaluation.hpp"
#include "elastoscope/phantom.hpp"
#include "elastoscope/registration.hpp"
#include "elastoscope/rf_synth.hpp"

namespace elastoscope::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Little-endian primitives

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  const T le = to_little(v);
  os.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated " + what);
  return to_little(v);
}

inline void write_floats(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t k = 0; k < n; ++k) put(os, data[k]);
  }
}

inline void read_floats(std::istream& is, float* data, std::size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw FormatError("truncated " + what);
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t k = 0; k < n; ++k) data[k] = to_little(data[k]);
  }
}

inline std::ofstream open_out(const fs::path& p, bool binary = true) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw FormatError("cannot open " + p.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const fs::path& p, bool binary = true) {
  std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
  if (!is) throw FormatError("cannot open " + p.string());
  return is;
}

}  // namespace detail

/// Shortest text form that round-trips at 17 significant digits.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_real(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("malformed number '" + s + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// ---------------------------------------------------------------------------
// SARF

inline constexpr std::array<char, 4> kSarfMagic = {'S', 'A', 'R', 'F'};
inline constexpr std::uint32_t kSarfVersion = 1;

inline void write_sarf(const fs::path& path, const RfDataSet& rf) {
  auto os = detail::open_out(path);
  os.write(kSarfMagic.data(), 4);
  detail::put<std::uint32_t>(os, kSarfVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(rf.n_elements));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(rf.samples));
  detail::put<double>(os, rf.sampling_rate);
  detail::put<double>(os, rf.t0);
  detail::put<double>(os, rf.center_frequency);
  detail::put<double>(os, rf.sound_speed);
  const std::vector<float> zeros(rf.n_elements * rf.samples, 0.0f);
  for (std::size_t tx = 0; tx < rf.n_elements; ++tx) {
    const std::size_t ti = rf.tx_index_of(tx);
    const float* row = ti == RfDataSet::npos ? zeros.data() : rf.traces.data() + ti * rf.n_elements * rf.samples;
    detail::write_floats(os, row, rf.n_elements * rf.samples);
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

inline RfDataSet read_sarf(const fs::path& path) {
  auto is = detail::open_in(path);
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw FormatError("truncated SARF header");
  if (magic != kSarfMagic) throw FormatError(path.string() + " is not a SARF file (bad magic)");
  const auto version = detail::get<std::uint32_t>(is, "SARF header");
  if (version != kSarfVersion) throw FormatError("unsupported SARF version " + std::to_string(version));
  RfDataSet rf;
  rf.n_elements = detail::get<std::uint32_t>(is, "SARF header");
  rf.samples = detail::get<std::uint32_t>(is, "SARF header");
  rf.sampling_rate = detail::get<double>(is, "SARF header");
  rf.t0 = detail::get<double>(is, "SARF header");
  rf.center_frequency = detail::get<double>(is, "SARF header");
  rf.sound_speed = detail::get<double>(is, "SARF header");
  const std::size_t row = rf.n_elements * rf.samples;
  std::vector<float> buf(row);
  for (std::size_t tx = 0; tx < rf.n_elements; ++tx) {
    detail::read_floats(is, buf.data(), row, "SARF samples");
    const bool fired = std::any_of(buf.begin(), buf.end(), [](float v) { return v != 0.0f; });
    if (!fired) continue;
    rf.tx_elements.push_back(static_cast<std::uint32_t>(tx));
    rf.traces.insert(rf.traces.end(), buf.begin(), buf.end());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after SARF samples");
  return rf;
}

// ---------------------------------------------------------------------------
// Float32 planes + JSON sidecar

inline json grid_to_json(const ImageGrid& g) {
  return {{"x0", g.x0}, {"z0", g.z0}, {"dx", g.dx}, {"dz", g.dz}, {"rows", g.rows}, {"cols", g.cols}};
}

inline ImageGrid grid_from_json(const json& j) {
  try {
    ImageGrid g;
    g.x0 = j.at("x0").get<double>();
    g.z0 = j.at("z0").get<double>();
    g.dx = j.at("dx").get<double>();
    g.dz = j.at("dz").get<double>();
    g.rows = j.at("rows").get<std::size_t>();
    g.cols = j.at("cols").get<std::size_t>();
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed grid geometry: ") + e.what());
  }
}

struct PlaneSet {
  ImageGrid grid;
  std::vector<std::string> names;
  std::vector<Image> planes;
  json metadata = json::object();

  const Image& plane(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (names[k] == name) return planes[k];
    }
    throw FormatError("plane '" + name + "' missing");
  }
  std::string meta_string(const std::string& key) const {
    return metadata.contains(key) && metadata[key].is_string() ? metadata[key].get<std::string>() : std::string();
  }
};

inline fs::path with_suffix(fs::path base, const std::string& suffix) {
  base += suffix;
  return base;
}

/// Strips a trailing .f32 / .json so either the data file or the sidecar can name a plane set.
inline fs::path plane_base(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".f32" || ext == ".json") return fs::path(p).replace_extension();
  return p;
}

inline void write_planes(const fs::path& base_in, const PlaneSet& set) {
  const fs::path base = plane_base(base_in);
  require(set.names.size() == set.planes.size(), "plane names and planes differ in count");
  {
    auto os = detail::open_out(with_suffix(base, ".f32"));
    std::vector<float> buf(set.grid.pixel_count());
    for (const Image& p : set.planes) {
      require(p.rows() == set.grid.rows && p.cols() == set.grid.cols, "plane does not match grid");
      for (std::size_t k = 0; k < p.size(); ++k) buf[k] = static_cast<float>(p.data()[k]);
      detail::write_floats(os, buf.data(), buf.size());
    }
    if (!os) throw FormatError("failed writing " + base.string() + ".f32");
  }
  json side = {{"format", "elastoscope-planes"},
               {"version", 1},
               {"grid", grid_to_json(set.grid)},
               {"planes", set.names},
               {"metadata", set.metadata}};
  auto os = detail::open_out(with_suffix(base, ".json"), false);
  os << side.dump(2) << '\n';
}

inline PlaneSet read_planes(const fs::path& base_in) {
  const fs::path base = plane_base(base_in);
  json side;
  {
    auto is = detail::open_in(with_suffix(base, ".json"), false);
    try {
      is >> side;
    } catch (const json::exception& e) {
      throw FormatError("malformed sidecar " + base.string() + ".json: " + e.what());
    }
  }
  if (side.value("format", "") != "elastoscope-planes") {
    throw FormatError(base.string() + ".json is not an elastoscope plane sidecar");
  }
  PlaneSet set;
  set.grid = grid_from_json(side.at("grid"));
  set.names = side.at("planes").get<std::vector<std::string>>();
  if (side.contains("metadata")) set.metadata = side["metadata"];
  auto is = detail::open_in(with_suffix(base, ".f32"));
  std::vector<float> buf(set.grid.pixel_count());
  for (std::size_t k = 0; k < set.names.size(); ++k) {
    detail::read_floats(is, buf.data(), buf.size(), "plane data in " + base.string() + ".f32");
    Image p(set.grid.rows, set.grid.cols);
    for (std::size_t q = 0; q < buf.size(); ++q) p.data()[q] = buf[q];
    set.planes.push_back(std::move(p));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + base.string() + ".f32");
  return set;
}

namespace detail {
inline Image mask_plane(const Mask& m) {
  Image out(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) out.data()[k] = m.data()[k] ? 1.0 : 0.0;
  return out;
}
inline Mask plane_mask(const Image& p) {
  Mask out(p.rows(), p.cols());
  for (std::size_t k = 0; k < p.size(); ++k) out.data()[k] = p.data()[k] != 0.0 ? 1 : 0;
  return out;
}
inline void expect_kind(const PlaneSet& s, const std::string& kind) {
  if (s.meta_string("kind") != kind) {
    throw FormatError("expected a '" + kind + "' plane set, found '" + s.meta_string("kind") + "'");
  }
}
}  // namespace detail

inline void write_field(const fs::path& base, const DisplacementField& f, json metadata = json::object()) {
  metadata["kind"] = "displacement";
  write_planes(base, {f.grid, {"ux_m", "uz_m", "valid"},
                      {f.ux_m, f.uz_m, detail::mask_plane(f.valid)}, metadata});
}

inline DisplacementField read_field(const fs::path& base, PlaneSet* raw = nullptr) {
  PlaneSet s = read_planes(base);
  detail::expect_kind(s, "displacement");
  DisplacementField f = DisplacementField::from_meters(s.grid, s.plane("ux_m"), s.plane("uz_m"),
                                                       detail::plane_mask(s.plane("valid")));
  if (raw) *raw = std::move(s);
  return f;
}

inline void write_truth(const fs::path& base, const GroundTruthField& t, json metadata = json::object()) {
  metadata["kind"] = "ground_truth";
  write_planes(base, {t.grid, {"ux_m", "uz_m", "wall_mask"},
                      {t.ux, t.uz, detail::mask_plane(t.wall_mask)}, metadata});
}

inline GroundTruthField read_truth(const fs::path& base, PlaneSet* raw = nullptr) {
  PlaneSet s = read_planes(base);
  detail::expect_kind(s, "ground_truth");
  GroundTruthField t{s.grid, s.plane("ux_m"), s.plane("uz_m"), detail::plane_mask(s.plane("wall_mask"))};
  if (raw) *raw = std::move(s);
  return t;
}

inline void write_image(const fs::path& base, const BeamformedImage& img, json metadata = json::object()) {
  metadata["kind"] = "image";
  metadata["stage"] = to_string(img.stage);
  if (img.stage == ImageStage::log) metadata["dynamic_range_db"] = img.dynamic_range_db;
  write_planes(base, {img.grid, {"values"}, {img.values}, metadata});
}

inline BeamformedImage read_image(const fs::path& base, PlaneSet* raw = nullptr) {
  PlaneSet s = read_planes(base);
  detail::expect_kind(s, "image");
  BeamformedImage img{s.grid, s.plane("values"), ImageStage::rf_sum};
  const std::string stage = s.meta_string("stage");
  if (stage == "envelope") img.stage = ImageStage::envelope;
  else if (stage == "log") img.stage = ImageStage::log;
  else if (stage != "rf_sum") throw FormatError("unknown image stage '" + stage + "'");
  if (img.stage == ImageStage::log) img.dynamic_range_db = s.metadata.value("dynamic_range_db", 0.0);
  if (raw) *raw = std::move(s);
  return img;
}

// ---------------------------------------------------------------------------
// P5

inline std::vector<unsigned char> to_gray(const BeamformedImage& img) {
  require(img.stage == ImageStage::log && img.dynamic_range_db > 0.0,
          "P5 export expects a log-compressed image");
  std::vector<unsigned char> px(img.values.size());
  const double dr = img.dynamic_range_db;
  for (std::size_t k = 0; k < px.size(); ++k) {
    const double v = std::clamp(img.values.data()[k], -dr, 0.0);
    px[k] = static_cast<unsigned char>(std::lround((v + dr) / dr * 255.0));
  }
  return px;
}

inline void write_pgm(const fs::path& path, std::size_t rows, std::size_t cols,
                      const std::vector<unsigned char>& px) {
  require(px.size() == rows * cols, "graymap size mismatch");
  auto os = detail::open_out(path);
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

inline void write_pgm(const fs::path& path, const BeamformedImage& log_img) {
  write_pgm(path, log_img.grid.rows, log_img.grid.cols, to_gray(log_img));
}

/// Linear graymap of a non-negative map scaled so `peak` -> 255.
inline void write_pgm_linear(const fs::path& path, const Image& values, double peak) {
  std::vector<unsigned char> px(values.size());
  for (std::size_t k = 0; k < px.size(); ++k) {
    const double v = peak > 0.0 ? std::clamp(values.data()[k] / peak, 0.0, 1.0) : 0.0;
    px[k] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  write_pgm(path, values.rows(), values.cols(), px);
}

struct Graymap {
  std::size_t rows = 0, cols = 0, maxval = 0;
  std::vector<unsigned char> pixels;
};

inline Graymap read_pgm(const fs::path& path) {
  auto is = detail::open_in(path);
  std::string magic;
  Graymap g;
  is >> magic >> g.cols >> g.rows >> g.maxval;
  if (magic != "P5" || !is) throw FormatError(path.string() + " is not a P5 graymap");
  is.get();
  g.pixels.resize(g.rows * g.cols);
  if (!is.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()))) {
    throw FormatError("truncated graymap " + path.string());
  }
  return g;
}

// ---------------------------------------------------------------------------
// CSV

/// `extra` adds `# key=value` comment lines after the standard ones.
inline void write_scatterers_csv(const fs::path& path, const ScattererCloud& cloud,
                                 const std::string& frame, const std::string& config_hash,
                                 const std::map<std::string, std::string>& extra = {}) {
  auto os = detail::open_out(path, false);
  os << "# seed=" << cloud.seed << "\n# frame=" << frame << "\n# config_hash=" << config_hash << "\n";
  for (const auto& [k, v] : extra) os << "# " << k << '=' << v << '\n';
  os << "x_m,z_m,amplitude\n";
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    os << format_real(cloud.positions[k].x) << ',' << format_real(cloud.positions[k].z) << ','
       << format_real(cloud.amplitudes[k]) << '\n';
  }
}

struct CsvComments {
  std::map<std::string, std::string> values;
  std::string get(const std::string& k) const {
    auto it = values.find(k);
    return it == values.end() ? std::string() : it->second;
  }
};

namespace detail {
inline void parse_comment(const std::string& line, CsvComments& c) {
  const auto body = line.substr(1);
  const auto eq = body.find('=');
  if (eq == std::string::npos) return;
  auto key = body.substr(0, eq);
  key.erase(0, key.find_first_not_of(' '));
  c.values[key] = body.substr(eq + 1);
}
}  // namespace detail

inline ScattererCloud read_scatterers_csv(const fs::path& path, CsvComments* comments = nullptr) {
  auto is = detail::open_in(path, false);
  ScattererCloud cloud;
  CsvComments c;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      detail::parse_comment(line, c);
      continue;
    }
    if (!header) {
      if (line != "x_m,z_m,amplitude") throw FormatError("unexpected scatterer CSV header");
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw FormatError("scatterer CSV row must have 3 columns");
    cloud.positions.push_back({parse_real(cells[0]), parse_real(cells[1])});
    cloud.amplitudes.push_back(parse_real(cells[2]));
  }
  if (!header) throw FormatError("scatterer CSV has no header");
  if (!c.get("seed").empty()) cloud.seed = std::stoull(c.get("seed"));
  if (comments) *comments = std::move(c);
  return cloud;
}

inline void write_field_csv(const fs::path& path, const DisplacementField& f) {
  auto os = detail::open_out(path, false);
  os << "x_m,z_m,ux_m,uz_m,valid\n";
  for (std::size_t i = 0; i < f.grid.rows; ++i) {
    for (std::size_t j = 0; j < f.grid.cols; ++j) {
      os << format_real(f.grid.x(j)) << ',' << format_real(f.grid.z(i)) << ','
         << format_real(f.ux_m(i, j)) << ',' << format_real(f.uz_m(i, j)) << ','
         << int(f.valid(i, j)) << '\n';
    }
  }
}

inline const char* kReportHeader =
    "strain_percent,estimator,rmse_percent,pixel_count,seed,config_hash,"
    "lateral_error_percent,axial_error_percent";

inline void write_report_csv(const fs::path& path, const EvalReport& report) {
  auto os = detail::open_out(path, false);
  os << "# elastoscope evaluation report\n";
  os << "# config_hash=" << report.config_hash << "\n# seed=" << report.seed << "\n";
  os << kReportHeader << '\n';
  for (const auto& r : report.rows) {
    os << format_real(r.strain_percent) << ',' << r.estimator << ',' << format_real(r.rmse_percent)
       << ',' << r.pixel_count << ',' << r.seed << ',' << r.config_hash << ','
       << format_real(r.lateral_error_percent) << ',' << format_real(r.axial_error_percent) << '\n';
  }
}

inline EvalReport read_report_csv(const fs::path& path) {
  auto is = detail::open_in(path, false);
  EvalReport rep;
  CsvComments c;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      detail::parse_comment(line, c);
      continue;
    }
    if (!header) {
      if (line != kReportHeader) throw FormatError("unexpected report CSV header");
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 8) throw FormatError("report CSV row must have 8 columns");
    EvalRow r;
    r.strain_percent = parse_real(cells[0]);
    r.estimator = cells[1];
    r.rmse_percent = parse_real(cells[2]);
    r.pixel_count = std::stoull(cells[3]);
    r.seed = std::stoull(cells[4]);
    r.config_hash = cells[5];
    r.lateral_error_percent = parse_real(cells[6]);
    r.axial_error_percent = parse_real(cells[7]);
    rep.rows.push_back(std::move(r));
  }
  if (!header) throw FormatError("report CSV has no header");
  rep.config_hash = c.get("config_hash");
  if (!c.get("seed").empty()) rep.seed = std::stoull(c.get("seed"));
  return rep;
}

}  // namespace elastoscope::io
