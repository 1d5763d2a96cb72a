// Command-line front end. Every command reads its stage inputs from files,
// runs one pipeline stage and writes its outputs under --out. Outputs carry
// the hash of the config sections their stage depends on; an input whose
// hash disagrees with the current config is rejected.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "elastoscope/core/parallel.hpp"
#include "elastoscope/elastoscope.hpp"
#include "elastoscope/io/config.hpp"
#include "elastoscope/io/formats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace elastoscope;
using namespace elastoscope::io;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::string> directivity;
  std::vector<double> strain_percent;
  std::string estimator = "both";
  std::string input, pre, post, field, truth;
};

struct Context {
  RunConfig config;
  fs::path out;

  const SceneConfig& scene() const { return config.scene; }
  std::string hash(Stage s) const { return stage_hash(config, s); }
};

Context make_context(const Options& o) {
  Context ctx;
  if (!o.config_path.empty()) ctx.config = load_config(o.config_path);
  if (o.seed) ctx.config.seed = *o.seed;
  if (o.threads) ctx.config.threads = *o.threads;
  if (o.out) ctx.config.output_dir = *o.out;
  if (o.directivity) ctx.config.scene.directivity = *o.directivity == "on";
  set_thread_count(ctx.config.threads);
  ctx.out = ctx.config.output_dir;
  fs::create_directories(ctx.out);
  return ctx;
}

// Shortest round-trip text of a strain in percent, snapped to 1e-9 so that
// 100 * fraction and a typed percentage name the same level.
std::string percent_text(double percent) {
  const double snapped = std::round(percent * 1e9) / 1e9;
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), snapped);
  return {buf, r.ptr};
}

std::string level_tag(double percent) { return "s" + percent_text(percent); }

double parse_percent(const std::string& text, const std::string& what) {
  if (text.empty()) throw FormatError(what + " records no strain level");
  return parse_real(text);
}

void require_hash(const std::string& found, const std::string& expected, const std::string& what,
                  Stage stage) {
  if (found.empty()) throw FormatError(what + " carries no config hash");
  if (found != expected) {
    throw FormatError(what + " was produced under " + to_string(stage) + " config hash " + found +
                      "; the current config gives " + expected);
  }
}

std::uint64_t meta_seed(const PlaneSet& s) {
  return s.metadata.contains("seed") ? s.metadata["seed"].get<std::uint64_t>() : 0;
}

std::vector<Estimator> estimators_of(const std::string& name) {
  if (name == "registration") return {Estimator::registration};
  if (name == "xcorr") return {Estimator::xcorr};
  return {Estimator::registration, Estimator::xcorr};
}

Image magnitude(const Image& ux, const Image& uz) {
  Image m(ux.rows(), ux.cols());
  for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = std::hypot(ux.data()[k], uz.data()[k]);
  return m;
}

double peak_of(const Image& v) {
  double p = 0.0;
  for (double x : v.flat()) p = std::max(p, x);
  return p;
}

// ---------------------------------------------------------------------------
// Stage writers shared by the single-stage commands and `sweep`.

void write_truth_files(const Context& ctx, const GroundTruthField& truth, double percent,
                       double pressure) {
  const std::string tag = level_tag(percent);
  write_truth(ctx.out / ("truth_" + tag), truth,
              {{"config_hash", ctx.hash(Stage::phantom)},
               {"strain_percent", percent_text(percent)},
               {"pressure_pa", pressure}});
}

json image_metadata(const Context& ctx, std::uint64_t seed, const std::string& frame,
                    const std::string& strain) {
  json m = {{"config_hash", ctx.hash(Stage::image)},
            {"seed", seed},
            {"frame", frame},
            {"directivity", ctx.scene().directivity}};
  if (!strain.empty()) m["strain_percent"] = strain;
  return m;
}

void write_image_files(const Context& ctx, const std::string& base, const BeamformedImage& env,
                       const json& meta) {
  write_image(ctx.out / base, env, meta);
  write_pgm(ctx.out / (base + ".pgm"), log_compress(env, ctx.scene().dynamic_range_db));
}

void write_field_files(const Context& ctx, const DisplacementField& f, Estimator e,
                       std::uint64_t seed, const std::string& strain, double display_peak) {
  const std::string base = "field_" + to_string(e) + "_" + level_tag(parse_real(strain));
  write_field(ctx.out / base, f,
              {{"config_hash", ctx.hash(Stage::estimate)},
               {"seed", seed},
               {"estimator", to_string(e)},
               {"strain_percent", strain}});
  write_pgm_linear(ctx.out / ("disp_" + to_string(e) + "_" + level_tag(parse_real(strain)) + ".pgm"),
                   magnitude(f.ux_m, f.uz_m), display_peak);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_phantom(const Options& o) {
  const Context ctx = make_context(o);
  const SceneConfig& s = ctx.scene();
  const std::string h = ctx.hash(Stage::phantom);
  const ScattererCloud pre = generate_scatterers(s.vessel, s.scatterers, s.scatterer_fov(), ctx.config.seed);
  write_scatterers_csv(ctx.out / "scatterers_pre.csv", pre, "pre", h);
  for (double percent : o.strain_percent) {
    require(percent > 0.0 && percent <= 20.0, "--strain must lie in (0, 20] percent");
    const double pressure = pressure_for_strain(s.vessel, percent / 100.0);
    const std::string text = percent_text(percent);
    write_scatterers_csv(ctx.out / ("scatterers_post_" + level_tag(percent) + ".csv"),
                         displace_scatterers(pre, s.vessel, pressure), "post", h,
                         {{"strain_percent", text}, {"pressure_pa", format_real(pressure)}});
    write_truth_files(ctx, ground_truth_on_grid(s.vessel, pressure, s.grid), percent, pressure);
  }
  return 0;
}

int cmd_simulate(const Options& o) {
  const Context ctx = make_context(o);
  const SceneConfig& s = ctx.scene();
  CsvComments com;
  const ScattererCloud cloud = read_scatterers_csv(o.input, &com);
  require_hash(com.get("config_hash"), ctx.hash(Stage::phantom), o.input, Stage::phantom);
  const std::string frame = com.get("frame");
  if (frame != "pre" && frame != "post") throw FormatError(o.input + " names no pre/post frame");
  const std::string strain = com.get("strain_percent");

  const Pulse pulse = excitation_pulse(s.array, s.fractional_bandwidth);
  SynthOptions opt;
  opt.tx_decimation = s.tx_decimation;
  opt.noise_snr_db = s.noise_snr_db;
  opt.frame = frame;
  opt.noise_seed = frame == "post"
                       ? frame_noise_seed(cloud.seed, parse_percent(strain, o.input) / 100.0)
                       : frame_noise_seed(cloud.seed);
  const RfDataSet rf =
      synthesize_channel_data(cloud, s.array, pulse, acquisition_window(s.array, s.grid.extent(), pulse), opt);

  std::string stem = fs::path(o.input).stem().string();
  if (stem.rfind("scatterers_", 0) == 0) stem = stem.substr(11);
  const fs::path sarf = ctx.out / ("rf_" + stem + ".sarf");
  write_sarf(sarf, rf);
  json side = {{"format", "elastoscope-sarf-meta"},
               {"config_hash", ctx.hash(Stage::rf)},
               {"seed", cloud.seed},
               {"frame", frame}};
  if (!strain.empty()) side["strain_percent"] = strain;
  std::ofstream(fs::path(sarf.string() + ".json")) << side.dump(2) << '\n';
  return 0;
}

int cmd_beamform(const Options& o) {
  const Context ctx = make_context(o);
  const SceneConfig& s = ctx.scene();
  RfDataSet rf = read_sarf(o.input);
  json side;
  const fs::path side_path = o.input + ".json";
  if (!fs::exists(side_path)) throw FormatError(o.input + " has no metadata sidecar " + side_path.string());
  std::ifstream(side_path) >> side;
  require_hash(side.value("config_hash", ""), ctx.hash(Stage::rf), o.input, Stage::rf);
  require(rf.n_elements == s.array.n_elements, "RF element count does not match the configured array");
  rf.frame = side.value("frame", "");

  const BeamformedImage env = beamform_envelope(rf, s.array, s.grid, s.directivity, s.axial_oversampling);
  std::string stem = fs::path(o.input).stem().string();
  if (stem.rfind("rf_", 0) == 0) stem = stem.substr(3);
  const std::string base = "bmode_" + stem + (s.directivity ? "" : "_nodir");
  write_image_files(ctx, base, env,
                    image_metadata(ctx, side.value("seed", std::uint64_t{0}), rf.frame,
                                   side.value("strain_percent", "")));
  return 0;
}

int cmd_estimate(const Options& o, Estimator e) {
  const Context ctx = make_context(o);
  PlaneSet pre_raw, post_raw;
  const BeamformedImage pre = read_image(o.pre, &pre_raw);
  const BeamformedImage post = read_image(o.post, &post_raw);
  for (const auto* raw : {&pre_raw, &post_raw}) {
    require_hash(raw->meta_string("config_hash"), ctx.hash(Stage::image),
                 raw == &pre_raw ? o.pre : o.post, Stage::image);
  }
  if (pre.stage != ImageStage::envelope || post.stage != ImageStage::envelope) {
    throw FormatError("estimators expect envelope images");
  }
  if (pre_raw.meta_string("frame") != "pre" || post_raw.meta_string("frame") != "post") {
    throw FormatError("--pre must be a pre-compression frame and --post a post-compression frame");
  }
  if (meta_seed(pre_raw) != meta_seed(post_raw)) throw FormatError("pre and post frames come from different seeds");
  if (!(pre.grid == post.grid) || !(pre.grid == ctx.scene().grid)) {
    throw FormatError("image grids differ from each other or from the configured grid");
  }
  const std::string strain = post_raw.meta_string("strain_percent");
  parse_percent(strain, o.post);
  const DisplacementField f = run_estimator(e, pre, post, ctx.scene());
  write_field_files(ctx, f, e, meta_seed(pre_raw), strain, peak_of(magnitude(f.ux_m, f.uz_m)));
  return 0;
}

int cmd_evaluate(const Options& o) {
  const Context ctx = make_context(o);
  PlaneSet field_raw, truth_raw;
  const DisplacementField f = read_field(o.field, &field_raw);
  const GroundTruthField t = read_truth(o.truth, &truth_raw);
  require_hash(field_raw.meta_string("config_hash"), ctx.hash(Stage::estimate), o.field, Stage::estimate);
  require_hash(truth_raw.meta_string("config_hash"), ctx.hash(Stage::phantom), o.truth, Stage::phantom);
  const std::string strain = truth_raw.meta_string("strain_percent");
  if (field_raw.meta_string("strain_percent") != strain) {
    throw FormatError("field and truth belong to different strain levels");
  }
  if (!(f.grid == t.grid)) throw FormatError("field and truth grids differ");

  const Mask mask = wall_mask(t, ctx.scene().erosion_px);
  EvalRow row;
  row.strain_percent = parse_percent(strain, o.truth);
  row.estimator = field_raw.meta_string("estimator");
  row.rmse_percent = relative_rmse(t, f, mask);
  row.pixel_count = mask_count(mask);
  row.seed = meta_seed(field_raw);
  row.config_hash = config_hash(ctx.config);
  const ComponentError ce = component_rmse(t, f, mask);
  row.lateral_error_percent = ce.lateral_percent;
  row.axial_error_percent = ce.axial_percent;

  EvalReport report;
  report.rows = {row};
  report.seed = row.seed;
  report.config_hash = row.config_hash;
  write_report_csv(ctx.out / ("eval_" + row.estimator + "_" + level_tag(row.strain_percent) + ".csv"), report);
  std::cout << row.estimator << " at " << strain << "% strain: RMSE " << format_real(row.rmse_percent)
            << "% over " << row.pixel_count << " pixels\n";
  return 0;
}

int cmd_sweep(const Options& o) {
  Context ctx = make_context(o);
  if (!o.strain_percent.empty()) {
    ctx.config.strain_levels.clear();
    for (double p : o.strain_percent) ctx.config.strain_levels.push_back(p / 100.0);
  }
  const SceneConfig& s = ctx.scene();
  const std::uint64_t seed = ctx.config.seed;
  const SweepResult r = run_sweep(ctx.config.strain_levels, estimators_of(o.estimator), s, seed,
                                  config_hash(ctx.config),
                                  [](const std::string& msg) { std::cerr << "sweep: " << msg << '\n'; });

  json resolved = to_json(ctx.config);
  resolved.erase("output_dir");
  std::ofstream(ctx.out / "config.json") << resolved.dump(2) << '\n';
  write_report_csv(ctx.out / "report.csv", r.report);
  write_image_files(ctx, "bmode_pre", r.pre_envelope, image_metadata(ctx, seed, "pre", ""));
  for (const LevelArtifacts& level : r.levels) {
    const double percent = level.strain * 100.0;
    const std::string tag = level_tag(percent), strain = percent_text(percent);
    write_truth_files(ctx, level.truth, percent, level.pressure);
    write_image_files(ctx, "bmode_post_" + tag, level.post_envelope, image_metadata(ctx, seed, "post", strain));
    // Displacement maps share the truth's scale so estimators compare by eye.
    const Image truth_mag = magnitude(level.truth.ux, level.truth.uz);
    const double peak = peak_of(truth_mag);
    write_pgm_linear(ctx.out / ("disp_truth_" + tag + ".pgm"), truth_mag, peak);
    for (const auto& [name, field] : level.fields) {
      write_field_files(ctx, field, name == "xcorr" ? Estimator::xcorr : Estimator::registration,
                        seed, strain, peak);
    }
  }
  for (const EvalRow& row : r.report.rows) {
    std::cout << percent_text(row.strain_percent) << "% " << row.estimator << ": RMSE "
              << format_real(row.rmse_percent) << "%\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-aperture vascular elastography pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration (absent keys keep defaults)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Scatterer seed (overrides the config)");
  app.add_option("--out", o.out, "Output directory (overrides the config)");
  app.add_option("--threads", o.threads, "Worker cap; 0 uses ELASTOSCOPE_THREADS or the runtime default");
  app.add_option("--directivity", o.directivity, "Element directivity weighting in DAS")
      ->check(CLI::IsMember({"on", "off"}));

  auto* phantom = app.add_subcommand("phantom", "Scatterer clouds and analytic ground truth");
  phantom->add_option("--strain", o.strain_percent, "Mean radial wall strain in percent (repeatable)");

  auto* simulate = app.add_subcommand("simulate", "Full-matrix RF channel data from a scatterer CSV");
  simulate->add_option("--input", o.input, "Scatterer CSV")->required()->check(CLI::ExistingFile);

  auto* beamform = app.add_subcommand("beamform", "DAS image, envelope planes and a log-compressed P5");
  beamform->add_option("--input", o.input, "SARF channel data")->required()->check(CLI::ExistingFile);

  CLI::App* estimators[2];
  const char* names[2] = {"register", "xcorr"};
  const char* help[2] = {"Multiresolution B-spline free-form registration",
                         "Adaptive block-matching cross-correlation"};
  for (int k = 0; k < 2; ++k) {
    estimators[k] = app.add_subcommand(names[k], help[k]);
    estimators[k]->add_option("--pre", o.pre, "Pre-compression envelope image")->required();
    estimators[k]->add_option("--post", o.post, "Post-compression envelope image")->required();
  }

  auto* evaluate = app.add_subcommand("evaluate", "Relative RMSE of a field against the ground truth");
  evaluate->add_option("--field", o.field, "Estimated displacement field")->required();
  evaluate->add_option("--truth", o.truth, "Ground-truth field")->required();

  auto* sweep = app.add_subcommand("sweep", "Full pipeline over the strain levels");
  sweep->add_option("--strain", o.strain_percent, "Strain levels in percent (replaces the config list)");
  sweep->add_option("--estimator", o.estimator, "Estimators to run")
      ->check(CLI::IsMember({"registration", "xcorr", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*phantom) return cmd_phantom(o);
    if (*simulate) return cmd_simulate(o);
    if (*beamform) return cmd_beamform(o);
    if (*estimators[0]) return cmd_estimate(o, Estimator::registration);
    if (*estimators[1]) return cmd_estimate(o, Estimator::xcorr);
    if (*evaluate) return cmd_evaluate(o);
    if (*sweep) return cmd_sweep(o);
  } catch (const ConfigError& e) {
    std::cerr << "elastoscope: config error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "elastoscope: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
