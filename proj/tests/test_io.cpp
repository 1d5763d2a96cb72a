#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "elastoscope/io/config.hpp"
#include "elastoscope/io/formats.hpp"

using namespace elastoscope;
using namespace elastoscope::io;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("elastoscope_io_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

RfDataSet random_rf(std::size_t n, std::size_t decimation, std::size_t samples) {
  RfDataSet rf;
  rf.n_elements = n;
  rf.tx_elements = transmit_elements(n, decimation);
  rf.samples = samples;
  rf.sampling_rate = 40e6;
  rf.t0 = 1.25e-6;
  rf.center_frequency = 3e6;
  rf.sound_speed = 1540.0;
  std::mt19937 rng(1);
  std::normal_distribution<float> g;
  rf.traces.resize(rf.tx_elements.size() * n * samples);
  for (auto& v : rf.traces) v = g(rng);
  return rf;
}

ImageGrid odd_grid() {
  // Values that do not survive a float round trip, to check geometry stays double.
  return {-6.4e-3 + 1e-13, 2.525e-3, 0.05e-3 / 3.0, 0.05e-3, 7, 5};
}

}  // namespace

using Sarf = TempDir;

TEST_F(Sarf, RoundTripWithDecimation) {
  const RfDataSet rf = random_rf(8, 4, 33);
  write_sarf(path("a.sarf"), rf);
  EXPECT_EQ(fs::file_size(path("a.sarf")), 4 + 3 * 4 + 4 * 8 + 8u * 8u * 33u * 4u);
  const RfDataSet back = read_sarf(path("a.sarf"));
  EXPECT_EQ(back.n_elements, 8u);
  EXPECT_EQ(back.samples, 33u);
  EXPECT_EQ(back.tx_elements, rf.tx_elements);
  EXPECT_EQ(back.traces, rf.traces);
  EXPECT_EQ(back.sampling_rate, rf.sampling_rate);
  EXPECT_EQ(back.t0, rf.t0);
  EXPECT_EQ(back.center_frequency, rf.center_frequency);
  EXPECT_EQ(back.sound_speed, rf.sound_speed);
}

TEST_F(Sarf, RejectsBadMagicTruncationAndTrailingBytes) {
  write_sarf(path("a.sarf"), random_rf(4, 1, 10));
  std::string bytes = slurp(path("a.sarf"));

  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(path("magic.sarf"), std::ios::binary) << bad;
  EXPECT_THROW(read_sarf(path("magic.sarf")), FormatError);

  std::ofstream(path("short.sarf"), std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(read_sarf(path("short.sarf")), FormatError);

  std::ofstream(path("long.sarf"), std::ios::binary) << bytes << "x";
  EXPECT_THROW(read_sarf(path("long.sarf")), FormatError);

  std::string v2 = bytes;
  v2[4] = 2;
  std::ofstream(path("v2.sarf"), std::ios::binary) << v2;
  EXPECT_THROW(read_sarf(path("v2.sarf")), FormatError);
  EXPECT_THROW(read_sarf(path("missing.sarf")), FormatError);
}

using Planes = TempDir;

TEST_F(Planes, FieldRoundTripKeepsGeometryExact) {
  const ImageGrid g = odd_grid();
  Image ux(7, 5), uz(7, 5);
  Mask valid(7, 5, 1);
  for (std::size_t k = 0; k < ux.size(); ++k) {
    ux.data()[k] = double(static_cast<float>(1e-6 * double(k)));
    uz.data()[k] = double(static_cast<float>(-2e-6 * double(k)));
  }
  valid(3, 2) = 0;
  write_field(path("f"), DisplacementField::from_meters(g, ux, uz, valid), {{"estimator", "xcorr"}});
  EXPECT_TRUE(fs::exists(path("f.f32")));
  EXPECT_TRUE(fs::exists(path("f.json")));
  PlaneSet raw;
  const DisplacementField back = read_field(path("f.json"), &raw);
  EXPECT_EQ(back.grid, g);
  EXPECT_EQ(back.ux_m, ux);
  EXPECT_EQ(back.uz_m, uz);
  EXPECT_EQ(back.valid, valid);
  EXPECT_EQ(raw.meta_string("estimator"), "xcorr");
  EXPECT_EQ(raw.meta_string("kind"), "displacement");
  EXPECT_THROW(read_truth(path("f")), FormatError);
  EXPECT_THROW(read_image(path("f.f32")), FormatError);
}

TEST_F(Planes, TruthAndImageRoundTrip) {
  const ImageGrid g = odd_grid();
  GroundTruthField t{g, Image(7, 5, 0.25), Image(7, 5, -0.5), Mask(7, 5, 1)};
  t.wall_mask(0, 0) = 0;
  write_truth(path("t"), t);
  const GroundTruthField tb = read_truth(path("t"));
  EXPECT_EQ(tb.grid, g);
  EXPECT_EQ(tb.ux, t.ux);
  EXPECT_EQ(tb.wall_mask, t.wall_mask);

  BeamformedImage img{g, Image(7, 5, -12.5), ImageStage::log, 50.0};
  write_image(path("i"), img);
  const BeamformedImage ib = read_image(path("i"));
  EXPECT_EQ(ib.stage, ImageStage::log);
  EXPECT_EQ(ib.dynamic_range_db, 50.0);
  EXPECT_EQ(ib.values, img.values);
}

TEST_F(Planes, RejectsTruncatedData) {
  write_truth(path("t"), GroundTruthField{odd_grid(), Image(7, 5), Image(7, 5), Mask(7, 5, 1)});
  const std::string bytes = slurp(path("t.f32"));
  std::ofstream(path("t.f32"), std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  EXPECT_THROW(read_truth(path("t")), FormatError);
}

using Graymaps = TempDir;

TEST_F(Graymaps, LogImageMapping) {
  ImageGrid g{0, 1e-3, 1e-4, 1e-4, 1, 4};
  BeamformedImage img{g, Image(1, 4), ImageStage::log, 50.0};
  img.values(0, 0) = 0.0;
  img.values(0, 1) = -25.0;
  img.values(0, 2) = -50.0;
  img.values(0, 3) = -80.0;
  write_pgm(path("a.pgm"), img);
  const Graymap m = read_pgm(path("a.pgm"));
  EXPECT_EQ(m.rows, 1u);
  EXPECT_EQ(m.cols, 4u);
  EXPECT_EQ(m.maxval, 255u);
  EXPECT_EQ(m.pixels, (std::vector<unsigned char>{255, 128, 0, 0}));
  EXPECT_EQ(slurp(path("a.pgm")).substr(0, 11), "P5\n4 1\n255\n");
  img.stage = ImageStage::envelope;
  EXPECT_THROW(write_pgm(path("b.pgm"), img), InvalidArgument);
}

using Csv = TempDir;

TEST_F(Csv, ScatterersRoundTripExactly) {
  ScattererCloud c;
  c.seed = 42;
  c.positions = {{-1.0 / 3.0 * 1e-3, 10e-3 + 1e-17}, {2e-3, 5e-3}};
  c.amplitudes = {0.1, -std::numeric_limits<double>::denorm_min()};
  write_scatterers_csv(path("s.csv"), c, "pre", "00ff", {{"strain_percent", "2"}});
  CsvComments comments;
  const ScattererCloud back = read_scatterers_csv(path("s.csv"), &comments);
  EXPECT_EQ(back, c);
  EXPECT_EQ(comments.get("frame"), "pre");
  EXPECT_EQ(comments.get("config_hash"), "00ff");
  EXPECT_EQ(comments.get("strain_percent"), "2");
}

TEST_F(Csv, ReportRoundTrip) {
  EvalReport r;
  r.seed = 7;
  r.config_hash = "0123456789abcdef";
  r.rows.push_back({0.1, "registration", 20.4412345678901, 4321, 7, r.config_hash, 1.5, 2.5});
  r.rows.push_back({10.0, "xcorr", 25.77, 4321, 7, r.config_hash, 11.0, 22.0});
  write_report_csv(path("r.csv"), r);
  const EvalReport back = read_report_csv(path("r.csv"));
  EXPECT_EQ(back.rows, r.rows);
  EXPECT_EQ(back.seed, 7u);
  EXPECT_EQ(back.config_hash, r.config_hash);
  std::ofstream(path("bad.csv")) << "strain,estimator\n1,xcorr\n";
  EXPECT_THROW(read_report_csv(path("bad.csv")), FormatError);
}

TEST_F(Csv, FieldCsvHasOneRowPerPixel) {
  const ImageGrid g = odd_grid();
  write_field_csv(path("f.csv"), DisplacementField::from_meters(g, Image(7, 5), Image(7, 5), Mask(7, 5, 1)));
  std::ifstream is(path("f.csv"));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "x_m,z_m,ux_m,uz_m,valid");
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 35u);
}

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config(""), RunConfig{});
  EXPECT_EQ(parse_config("  \n\t"), RunConfig{});
  EXPECT_EQ(parse_config("{}"), RunConfig{});
  const RunConfig d;
  EXPECT_EQ(d.scene.array.n_elements, 128u);
  EXPECT_EQ(d.strain_levels.size(), 7u);
}

TEST(Config, ErrorsNameTheKey) {
  auto key_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<no error>");
  };
  EXPECT_EQ(key_of(R"({"array": {"n_elements": 0}})"), "array.n_elements");
  EXPECT_EQ(key_of(R"({"array": {"n_elements": -3}})"), "array.n_elements");
  EXPECT_EQ(key_of(R"({"array": {"elements": 64}})"), "array.elements");
  EXPECT_EQ(key_of(R"({"grid": {"dx": "fine"}})"), "grid.dx");
  EXPECT_EQ(key_of(R"({"beamform": {"directivity": 1}})"), "beamform.directivity");
  EXPECT_EQ(key_of(R"({"registration": {"annealing_rate": 1.5}})"), "registration.annealing_rate");
  EXPECT_EQ(key_of(R"({"registration": {"similarity": "mi"}})"), "registration.similarity");
  EXPECT_EQ(key_of(R"({"registration": {"input": "rf"}})"), "registration.input");
  EXPECT_EQ(key_of(R"({"sweep": {"strain_levels": [0.01, 0.5]}})"), "sweep.strain_levels");
  EXPECT_EQ(key_of(R"({"vessel": {"poisson_ratio": 0.5}})"), "vessel.poisson_ratio");
  EXPECT_EQ(key_of(R"({"seeds": 1})"), "seeds");
  EXPECT_EQ(key_of(R"({"array": )"), "<root>");
  try {
    parse_config(R"({"array": {"n_elements": 0}})");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("n_elements"), std::string::npos);
  }
}

TEST(Config, JsonRoundTripAndHash) {
  RunConfig c;
  c.scene.array.n_elements = 64;
  c.scene.noise_snr_db = 30.0;
  c.scene.directivity = false;
  c.scene.registration.regularization_weight = 0.125;
  c.scene.registration_input = ImageStage::log;
  c.strain_levels = {0.01, 0.02};
  c.seed = 9;
  const RunConfig back = parse_config(to_json(c).dump());
  EXPECT_EQ(back, c);

  // The hash ignores run bookkeeping but not physics.
  const std::string h = config_hash(c);
  EXPECT_EQ(h.size(), 16u);
  RunConfig d = c;
  d.seed = 10;
  d.threads = 3;
  d.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(d), h);
  d.scene.directivity = true;
  EXPECT_NE(config_hash(d), h);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, NullNoiseMeansNoiseless) {
  const RunConfig c = parse_config(R"({"array": {"noise_snr_db": null}})");
  EXPECT_FALSE(c.scene.noise_snr_db.has_value());
  const RunConfig n = parse_config(R"({"array": {"noise_snr_db": 25}})");
  EXPECT_EQ(n.scene.noise_snr_db, 25.0);
}

using ConfigFiles = TempDir;

TEST_F(ConfigFiles, SaveAndLoad) {
  RunConfig c;
  c.seed = 123;
  save_config(path("sub/c.json"), c);
  EXPECT_EQ(load_config(path("sub/c.json")), c);
  EXPECT_THROW(load_config(path("none.json")), FormatError);
}

TEST(Config, StageHashesCoverUpstreamSectionsOnly) {
  const RunConfig base;
  RunConfig dir = base;
  dir.scene.directivity = false;
  EXPECT_EQ(stage_hash(dir, Stage::phantom), stage_hash(base, Stage::phantom));
  EXPECT_EQ(stage_hash(dir, Stage::rf), stage_hash(base, Stage::rf));
  EXPECT_NE(stage_hash(dir, Stage::image), stage_hash(base, Stage::image));
  EXPECT_NE(stage_hash(dir, Stage::report), stage_hash(base, Stage::report));

  RunConfig vessel = base;
  vessel.scene.vessel.elastic_modulus *= 2;
  for (Stage s : {Stage::phantom, Stage::rf, Stage::image, Stage::estimate, Stage::report}) {
    EXPECT_NE(stage_hash(vessel, s), stage_hash(base, s)) << to_string(s);
  }
  RunConfig reg = base;
  reg.scene.registration.max_iterations = 10;
  EXPECT_EQ(stage_hash(reg, Stage::image), stage_hash(base, Stage::image));
  EXPECT_NE(stage_hash(reg, Stage::estimate), stage_hash(base, Stage::estimate));
  EXPECT_EQ(config_hash(base), stage_hash(base, Stage::report));
}
