// Acceptance gate: one PASS/FAIL line per criterion, details indented below.
// Exit status is nonzero when any criterion fails.
//
//   acceptance --work-dir DIR --cli PATH/TO/elastoscope
//
// The sweep criteria drive the CLI so the shipped binary is what gets judged.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "elastoscope/elastoscope.hpp"
#include "elastoscope/io/formats.hpp"
#include "support.hpp"

using namespace elastoscope;
using elastoscope::testing::max_abs;
using elastoscope::testing::Texture;
namespace fs = std::filesystem;

namespace {

// Tolerances, pinned.
constexpr double kFloorPercent = 15.0;
constexpr double kXcorrRiseFactor = 1.5;
constexpr double kSweepBudgetSeconds = 15 * 60;
constexpr double kLameRelative = 1e-3;
constexpr double kEquilibriumRelative = 1e-6;
constexpr double kWallDisplacementAbs = 0.05e-6;
constexpr double kPsfBudgetSeconds = 60;
constexpr double kIdentityPx = 0.05;
constexpr double kTranslationPx = 0.1;
constexpr double kWarpMaePx = 0.25;
constexpr double kGradientRelative = 1e-4;
constexpr double kFractionalMaeSamples = 0.1;
constexpr double kNccInvariance = 1e-12;
constexpr double kRmseExact = 1e-12;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Criterion {
 public:
  explicit Criterion(std::string name) : name_(std::move(name)) {}

  void check(bool ok, const std::string& detail) {
    pass_ = pass_ && ok;
    lines_.push_back(std::string(ok ? "ok   " : "FAIL ") + detail);
  }
  void note(const std::string& detail) { lines_.push_back("     " + detail); }

  bool report() const {
    std::cout << (pass_ ? "PASS " : "FAIL ") << name_ << "\n";
    for (const auto& l : lines_) std::cout << "    " << l << "\n";
    std::cout.flush();
    return pass_;
  }

 private:
  std::string name_;
  bool pass_ = true;
  std::vector<std::string> lines_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Runs `body`, turning an exception into a failed check instead of an abort.
bool run(Criterion c, const std::function<void(Criterion&)>& body) {
  try {
    body(c);
  } catch (const std::exception& e) {
    c.check(false, std::string("exception: ") + e.what());
  }
  return c.report();
}

// ---------------------------------------------------------------------------
// Sweep through the CLI

struct SweepRun {
  fs::path dir;
  double seconds = 0.0;
  int status = -1;
};

SweepRun cli_sweep(const fs::path& cli, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  SweepRun r{dir};
  const auto quoted = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  const std::string cmd = quoted(cli) + " --seed 0 --out " + quoted(dir) + " sweep > " +
                          quoted(dir / "stdout.log") + " 2> " + quoted(dir / "stderr.log");
  const auto t0 = Clock::now();
  r.status = std::system(cmd.c_str());
  r.seconds = seconds_since(t0);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void crossover_and_floor(const SweepRun& run1, bool& crossover_ok, bool& floor_ok) {
  const std::vector<double> levels{0.1, 0.5, 1, 2, 3, 5, 10};
  EvalReport rep;
  std::string load_error;
  if (run1.status == 0) {
    try {
      rep = io::read_report_csv(run1.dir / "report.csv");
    } catch (const std::exception& e) {
      load_error = e.what();
    }
  } else {
    load_error = "sweep exited with status " + std::to_string(run1.status);
  }

  crossover_ok = run(Criterion("crossover: registration improves with strain and overtakes xcorr"), [&](Criterion& c) {
    if (!load_error.empty()) throw std::runtime_error(load_error);
    c.check(rep.seed == 0, "report seed is 0");
    for (double p : levels) {
      for (const char* e : {"registration", "xcorr"}) {
        if (!rep.find(p, e)) throw std::runtime_error("report lacks " + std::string(e) + " at " + fmt("%g%%", p));
      }
    }
    for (double p : levels) {
      c.note(fmt("strain %5.1f%%", p) + fmt("  registration %7.2f%%", rep.find(p, "registration")->rmse_percent) +
             fmt("  xcorr %7.2f%%", rep.find(p, "xcorr")->rmse_percent));
    }
    const double reg_lo = rep.find(0.1, "registration")->rmse_percent;
    const double reg_hi = rep.find(10, "registration")->rmse_percent;
    const double xc_hi = rep.find(10, "xcorr")->rmse_percent;
    double xc_min = INFINITY;
    for (double p : levels) xc_min = std::min(xc_min, rep.find(p, "xcorr")->rmse_percent);
    c.check(reg_hi < reg_lo, fmt("(a) registration at 10%% (%.2f) < at 0.1%%", reg_hi) + fmt(" (%.2f)", reg_lo));
    c.check(xc_hi >= kXcorrRiseFactor * xc_min,
            fmt("(b) xcorr at 10%% (%.2f) >= 1.5 x its minimum", xc_hi) + fmt(" (%.2f)", xc_min));
    c.check(reg_hi < xc_hi, fmt("(c) registration %.2f", reg_hi) + fmt(" < xcorr %.2f at 10%%", xc_hi));
    c.check(run1.seconds <= kSweepBudgetSeconds, fmt("sweep wall time %.0f s <= 900 s", run1.seconds));
  });

  floor_ok = run(Criterion("registration floor: RMSE at 10% strain <= 15%"), [&](Criterion& c) {
    if (!load_error.empty()) throw std::runtime_error(load_error);
    const auto* row = rep.find(10, "registration");
    if (!row) throw std::runtime_error("report lacks registration at 10%");
    c.check(row->rmse_percent <= kFloorPercent, fmt("registration RMSE %.2f%% <= 15%%", row->rmse_percent));
    c.note("over " + std::to_string(row->pixel_count) + " wall pixels");
  });
}

bool determinism(const SweepRun& a, const SweepRun& b) {
  return run(Criterion("determinism: repeated sweep is byte-identical"), [&](Criterion& c) {
    c.check(a.status == 0 && b.status == 0, "both sweeps exit 0");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a.dir)) {
      const std::string n = e.path().filename().string();
      if (!n.ends_with(".log")) names.push_back(n);
    }
    std::sort(names.begin(), names.end());
    std::size_t csv = 0, fields = 0, differing = 0;
    for (const auto& n : names) {
      if (!fs::exists(b.dir / n) || slurp(a.dir / n) != slurp(b.dir / n)) {
        ++differing;
        c.note("differs: " + n);
      }
      if (n.ends_with(".csv")) ++csv;
      if (n.starts_with("field_") && n.ends_with(".f32")) ++fields;
    }
    std::size_t b_count = 0;
    for (const auto& e : fs::directory_iterator(b.dir)) b_count += e.path().extension() != ".log";
    c.check(b_count == names.size(), std::to_string(names.size()) + " outputs in each run");
    c.check(csv >= 1 && fields >= 14, std::to_string(csv) + " CSV and " + std::to_string(fields) +
                                          " field payload files present");
    c.check(differing == 0, std::to_string(differing) + " files differ");
  });
}

// ---------------------------------------------------------------------------
// Mechanics

struct LameOracle {
  double a, b, E, nu, p;
  double lambda() const { return E * nu / ((1 + nu) * (1 - 2 * nu)); }
  double mu() const { return E / (2 * (1 + nu)); }
  double u(double r) const {
    const double A = p * a * a / ((b * b - a * a) * 2 * (lambda() + mu()));
    const double B = p * a * a * b * b / ((b * b - a * a) * 2 * mu());
    return A * r + B / r;
  }
};

template <typename F>
double d_dr(F&& f, double r, double h) {
  return (-f(r + 2 * h) + 8 * f(r + h) - 8 * f(r - h) + f(r - 2 * h)) / (12 * h);
}

bool mechanics() {
  return run(Criterion("mechanics: Lame field, equilibrium and wall displacements"), [](Criterion& c) {
    const VesselSpec s;
    const double p = 700.0;
    const LameOracle o{s.inner_radius, s.outer_radius, s.elastic_modulus, s.poisson_ratio, p};
    for (double r : {s.inner_radius, 0.5 * (s.inner_radius + s.outer_radius), s.outer_radius}) {
      const double got = lame_radial_displacement(s, p, r);
      const double rel = std::abs(got - o.u(r)) / std::abs(o.u(r));
      c.check(rel <= kLameRelative, fmt("r = %.2f mm", r * 1e3) + fmt(": relative error %.2e <= 1e-3", rel));
    }
    auto u = [&](double r) { return lame_radial_displacement(s, p, r); };
    const double lam = o.lambda(), mu = o.mu(), h = 1e-6, H = 1e-5;
    auto sig_r = [&](double r) {
      const double er = d_dr(u, r, h);
      return lam * (er + u(r) / r) + 2 * mu * er;
    };
    auto sig_t = [&](double r) {
      const double er = d_dr(u, r, h);
      return lam * (er + u(r) / r) + 2 * mu * u(r) / r;
    };
    const double lo = s.inner_radius + 2 * H + 2 * h, hi = s.outer_radius - 2 * H - 2 * h;
    double worst = 0.0;
    for (int k = 0; k <= 50; ++k) {
      const double r = lo + (hi - lo) * k / 50.0;
      const double residual = d_dr(sig_r, r, H) + (sig_r(r) - sig_t(r)) / r;
      worst = std::max(worst, std::abs(residual) / (p / (s.outer_radius - s.inner_radius)));
    }
    c.check(worst < kEquilibriumRelative, fmt("equilibrium residual %.2e < 1e-6 of p/(b-a)", worst));
    const double ua = u(s.inner_radius), ub = u(s.outer_radius);
    c.check(std::abs(ua - 41.9e-6) <= kWallDisplacementAbs, fmt("u(a) = %.2f um, expect 41.9", ua * 1e6));
    c.check(std::abs(ub - 10.6e-6) <= kWallDisplacementAbs, fmt("u(b) = %.2f um, expect 10.6", ub * 1e6));
  });
}

// ---------------------------------------------------------------------------
// Beamformer

ImageGrid centred_grid(double z_center, double pitch, std::size_t rows, std::size_t cols) {
  ImageGrid g;
  g.dx = g.dz = pitch;
  g.rows = rows;
  g.cols = cols;
  g.x0 = -0.5 * double(cols - 1) * pitch;
  g.z0 = z_center - 0.5 * double(rows - 1) * pitch;
  return g;
}

RfDataSet point_target(const ArrayGeometry& geom, Point2 p, const Region& region) {
  const Pulse pulse = excitation_pulse(geom, 0.6);
  ScattererCloud cloud;
  cloud.positions = {p};
  cloud.amplitudes = {1.0};
  return synthesize_channel_data(cloud, geom, pulse, acquisition_window(geom, region, pulse));
}

double fwhm(const std::vector<double>& v, double pitch) {
  const auto peak = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  const double half = 0.5 * v[peak];
  std::size_t l = peak, r = peak;
  while (l > 0 && v[l - 1] >= half) --l;
  while (r + 1 < v.size() && v[r + 1] >= half) ++r;
  const double left = l > 0 ? double(l) - (v[l] - half) / (v[l] - v[l - 1]) : 0.0;
  const double right = r + 1 < v.size() ? double(r) + (v[r] - half) / (v[r] - v[r + 1]) : double(r);
  return (right - left) * pitch;
}

bool beamformer_psf() {
  return run(Criterion("beamformer PSF: localization and shallow directivity narrowing"), [](Criterion& c) {
    const auto t0 = Clock::now();
    const ArrayGeometry geom;
    {
      const Point2 target{0.0, 10e-3};
      const ImageGrid grid = centred_grid(10e-3, 0.05e-3, 41, 41);
      const RfDataSet rf = point_target(geom, target, grid.extent());
      for (bool dir : {false, true}) {
        const BeamformedImage env = beamform_envelope(rf, geom, grid, dir, 2);
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < grid.rows; ++i) {
          for (std::size_t j = 0; j < grid.cols; ++j) {
            if (env.values(i, j) > env.values(bi, bj)) bi = i, bj = j;
          }
        }
        const double ex = std::abs(grid.x(bj) - target.x) / grid.dx;
        const double ez = std::abs(grid.z(bi) - target.z) / grid.dz;
        c.check(ex <= 1.0 + 1e-9 && ez <= 1.0 + 1e-9,
                std::string(dir ? "with" : "without") + " directivity: peak offset " + fmt("(%.0f,", ex) +
                    fmt(" %.0f) px <= 1", ez));
      }
    }
    {
      const ImageGrid grid = centred_grid(2e-3, 0.01e-3, 61, 301);
      const RfDataSet rf = point_target(geom, {0.0, 2e-3}, grid.extent());
      double width[2];
      for (int dir = 0; dir < 2; ++dir) {
        const BeamformedImage env = envelope_detect(das_beamform(rf, geom, grid, dir == 1));
        std::size_t bi = 0;
        for (std::size_t i = 0; i < grid.rows; ++i) {
          if (env.values(i, grid.cols / 2) > env.values(bi, grid.cols / 2)) bi = i;
        }
        std::vector<double> profile(grid.cols);
        for (std::size_t j = 0; j < grid.cols; ++j) profile[j] = env.values(bi, j);
        width[dir] = fwhm(profile, grid.dx);
      }
      c.check(width[1] <= width[0], fmt("2 mm lateral FWHM with directivity %.0f um", width[1] * 1e6) +
                                        fmt(" <= without %.0f um", width[0] * 1e6));
    }
    const double t = seconds_since(t0);
    c.check(t < kPsfBudgetSeconds, fmt("wall time %.1f s < 60 s", t));
  });
}

// ---------------------------------------------------------------------------
// Registration

ControlGrid random_grid(std::size_t rows, std::size_t cols, double spacing, double amplitude, std::uint64_t seed) {
  ControlGrid cg = make_control_grid(rows, cols, spacing);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  for (auto& v : cg.ux.flat()) v = u(rng);
  for (auto& v : cg.uz.flat()) v = u(rng);
  return cg;
}

bool registration_oracles() {
  return run(Criterion("registration oracles: identity, translation, B-spline warp, gradient"), [](Criterion& c) {
    {
      const Image img = Texture(4).sample(96, 96);
      const DisplacementField f = register_images(img, img, RegistrationConfig{});
      const double m = std::max(max_abs(f.ux_px), max_abs(f.uz_px));
      c.check(m < kIdentityPx, fmt("identity: max |u| = %.2e px < 0.05", m));
    }
    {
      const Texture tex(5);
      const Image ref = tex.sample(128, 128), tgt = tex.sample(128, 128, -2.0, -3.0);
      const DisplacementField f = register_images(ref, tgt, RegistrationConfig{});
      double sx = 0, sz = 0;
      std::size_t n = 0;
      for (std::size_t i = 16; i + 16 < 128; ++i) {
        for (std::size_t j = 16; j + 16 < 128; ++j) sx += f.ux_px(i, j), sz += f.uz_px(i, j), ++n;
      }
      sx /= double(n);
      sz /= double(n);
      c.check(std::abs(sx - 2.0) <= kTranslationPx && std::abs(sz - 3.0) <= kTranslationPx,
              fmt("translation (2, 3): mean (%.3f,", sx) + fmt(" %.3f) px within 0.1", sz));
    }
    {
      const std::size_t n = 128;
      ControlGrid warp = random_grid(n, n, 30.0, 1.0, 41);
      DisplacementField known = ffd_evaluate(warp, unit_grid(n, n));
      const double peak = std::max(max_abs(known.ux_px), max_abs(known.uz_px));
      for (auto& v : warp.ux.flat()) v *= 4.0 / peak;
      for (auto& v : warp.uz.flat()) v *= 4.0 / peak;
      known = ffd_evaluate(warp, unit_grid(n, n));
      const Texture tex(6);
      Image ref(n, n);
      const Image tgt = tex.sample(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) ref(i, j) = tex(double(j) + known.ux_px(i, j), double(i) + known.uz_px(i, j));
      }
      const DisplacementField f = register_images(ref, tgt, RegistrationConfig{});
      double err = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 8; i + 8 < n; ++i) {
        for (std::size_t j = 8; j + 8 < n; ++j) {
          err += std::hypot(f.ux_px(i, j) - known.ux_px(i, j), f.uz_px(i, j) - known.uz_px(i, j));
          ++count;
        }
      }
      err /= double(count);
      c.check(err < kWarpMaePx, fmt("B-spline warp (max 4 px): mean abs error %.3f px < 0.25", err));
    }
    {
      std::mt19937_64 rng(17);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      Image ref(32, 32), tgt(32, 32);
      for (auto& v : ref.flat()) v = u01(rng);
      for (auto& v : tgt.flat()) v = u01(rng);
      const ControlGrid cg = random_grid(32, 32, 8.0, 0.7, 23);
      const double lambda = 0.05, step = 1e-4;
      const ObjectiveValue base = ssd_objective(ref, tgt, cg, lambda);
      double num = 0.0, den = 0.0;
      for (int comp = 0; comp < 2; ++comp) {
        for (std::size_t k = 0; k < cg.knot_count(); ++k) {
          ControlGrid plus = cg, minus = cg;
          (comp ? plus.uz : plus.ux).data()[k] += step;
          (comp ? minus.uz : minus.ux).data()[k] -= step;
          const double fd = (ssd_objective(ref, tgt, plus, lambda, false).value -
                             ssd_objective(ref, tgt, minus, lambda, false).value) /
                            (2 * step);
          const double an = (comp ? base.grad_uz : base.grad_ux).data()[k];
          num += (fd - an) * (fd - an);
          den += an * an;
        }
      }
      const double rel = std::sqrt(num / den);
      c.check(rel < kGradientRelative, fmt("SSD gradient vs central differences: relative %.2e < 1e-4", rel));
    }
  });
}

// ---------------------------------------------------------------------------
// Cross-correlation

bool xcorr_oracles() {
  return run(Criterion("xcorr oracles: integer shifts, 0.3-sample shift, NCC invariance"), [](Criterion& c) {
    const XcorrConfig cfg;
    {
      const Texture tex(21);
      const std::size_t rows = 200, cols = 60;
      const Image ref = tex.sample(rows, cols), tgt = tex.sample(rows, cols, -1.0, -3.0);
      XcorrLattice lat;
      estimate_displacement_adaptive(ref, tgt, cfg, &lat);
      std::size_t checked = 0, wrong = 0;
      for (std::size_t r = 0; r < lat.center_rows.size(); ++r) {
        for (std::size_t k = 0; k < lat.center_cols.size(); ++k) {
          if (lat.center_rows[r] + cfg.window_axial / 2 + 3 >= rows) continue;
          if (lat.center_cols[k] + cfg.window_lateral / 2 + 1 >= cols) continue;
          const int az = lat.search_center_axial(r, k) + lat.lag_axial(r, k);
          const int ax = lat.search_center_lateral(r, k) + lat.lag_lateral(r, k);
          wrong += az != 3 || ax != 1;
          ++checked;
        }
      }
      c.check(checked > 50 && wrong == 0, "shift (1, 3) px: " + std::to_string(wrong) + " of " +
                                              std::to_string(checked) + " windows off the exact integer peak");
    }
    {
      const Texture tex(22);
      const std::size_t rows = 240, half = cfg.window_axial / 2;
      const Image ref = tex.sample(rows, 60), tgt = tex.sample(rows, 60, 0.0, -0.3);
      XcorrLattice lat;
      estimate_displacement_adaptive(ref, tgt, cfg, &lat);
      double inner = 0.0, all = 0.0;
      std::size_t n_inner = 0, n_all = 0;
      for (std::size_t r = 0; r < lat.center_rows.size(); ++r) {
        const std::size_t cz = lat.center_rows[r];
        const bool stencil_inside = cz >= half + 1 && cz + half + 1 < rows;
        for (std::size_t k = 0; k < lat.center_cols.size(); ++k) {
          const double e = std::abs(lat.disp_axial(r, k) - 0.3);
          all += e;
          ++n_all;
          if (stencil_inside) inner += e, ++n_inner;
        }
      }
      inner /= double(n_inner);
      all /= double(n_all);
      c.check(all < kFractionalMaeSamples, fmt("0.3-sample axial shift: mean abs error %.4f samples < 0.1", all));
      c.note(fmt("windows with the full refinement stencil: %.4f", inner));
    }
    {
      std::mt19937_64 rng(4);
      std::normal_distribution<double> g;
      std::vector<double> a(200), b(200), scaled(200), shifted(200);
      for (std::size_t k = 0; k < a.size(); ++k) {
        a[k] = g(rng);
        b[k] = 0.5 * a[k] + g(rng);
        scaled[k] = 2.5 * b[k];
        shifted[k] = b[k] + 7.0;
      }
      const double r = ncc(a, b);
      const double ds = std::abs(ncc(a, scaled) - r), dz = std::abs(ncc(a, shifted) - r);
      c.check(ds <= kNccInvariance && dz <= kNccInvariance,
              fmt("NCC scale change %.1e,", ds) + fmt(" offset change %.1e <= 1e-12", dz));
    }
  });
}

// ---------------------------------------------------------------------------
// Relative RMSE

bool rmse_units() {
  return run(Criterion("relative RMSE: self is 0%, uniform 1.1x is 10%"), [](Criterion& c) {
    ImageGrid g = centred_grid(12.0e-3, 0.1e-3, 64, 64);
    g.z0 = 11.0e-3;  // straddles the lower wall
    const VesselSpec v;
    const GroundTruthField t = ground_truth_on_grid(v, pressure_for_strain(v, 0.02), g);
    auto scaled = [&](double k) {
      Image ux = t.ux, uz = t.uz;
      for (auto& x : ux.flat()) x *= k;
      for (auto& x : uz.flat()) x *= k;
      return DisplacementField::from_meters(t.grid, ux, uz, Mask(g.rows, g.cols, 1));
    };
    const double self = relative_rmse(t, scaled(1.0), t.wall_mask);
    const double over = relative_rmse(t, scaled(1.1), t.wall_mask);
    c.check(self == 0.0, fmt("self comparison %.3g%%", self));
    c.check(std::abs(over - 10.0) <= kRmseExact, fmt("uniform 1.1x: %.15f%%", over));
    c.note("over " + std::to_string(mask_count(t.wall_mask)) + " wall pixels");
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"elastoscope acceptance gate"};
  fs::path work = "acceptance_work", cli;
  app.add_option("--work-dir", work, "Scratch directory for sweep outputs");
  app.add_option("--cli", cli, "elastoscope executable")->required()->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  bool ok = true;
  ok &= mechanics();
  ok &= beamformer_psf();
  ok &= registration_oracles();
  ok &= xcorr_oracles();
  ok &= rmse_units();

  std::cerr << "running the default sweep twice through the CLI\n";
  const SweepRun a = cli_sweep(cli, work / "sweep_a");
  const SweepRun b = cli_sweep(cli, work / "sweep_b");
  bool crossover_ok = false, floor_ok = false;
  crossover_and_floor(a, crossover_ok, floor_ok);
  ok &= crossover_ok && floor_ok;
  ok &= determinism(a, b);

  std::cout << (ok ? "ALL PASS" : "SOME CRITERIA FAILED") << "\n";
  return ok ? 0 : 1;
}
