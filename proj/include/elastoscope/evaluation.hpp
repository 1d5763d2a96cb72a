#pragma once

// Scoring against the analytic ground truth and the end-to-end strain sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "elastoscope/beamformer.hpp"
#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"
#include "elastoscope/phantom.hpp"
#include "elastoscope/registration.hpp"
#include "elastoscope/rf_synth.hpp"
#include "elastoscope/xcorr.hpp"

namespace elastoscope {

// ---------------------------------------------------------------------------
// Error metrics

/// sqrt(mean(((|u_true| - |u_est|) / |u_true|)^2)) * 100 over the mask.
inline double relative_rmse(const GroundTruthField& truth, const DisplacementField& est,
                            const Mask& mask) {
  const std::size_t rows = truth.grid.rows, cols = truth.grid.cols;
  require(est.grid.rows == rows && est.grid.cols == cols && mask.rows() == rows &&
              mask.cols() == cols,
          "truth, estimate and mask must share the grid");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask(i, j)) continue;
      const double t = std::hypot(truth.ux(i, j), truth.uz(i, j));
      if (!(t > 0.0)) throw OutOfDomain("masked pixel has zero true displacement");
      const double e = std::hypot(est.ux_m(i, j), est.uz_m(i, j));
      const double r = (t - e) / t;
      sum += r * r;
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("relative RMSE over an empty mask");
  return std::sqrt(sum / static_cast<double>(count)) * 100.0;
}

/// Per-component error normalized by the RMS true magnitude (percent).
struct ComponentError {
  double lateral_percent = 0.0;
  double axial_percent = 0.0;
};

inline ComponentError component_rmse(const GroundTruthField& truth, const DisplacementField& est,
                                     const Mask& mask) {
  double ex = 0.0, ez = 0.0, tt = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask.data()[k]) continue;
    const double dx = truth.ux.data()[k] - est.ux_m.data()[k];
    const double dz = truth.uz.data()[k] - est.uz_m.data()[k];
    ex += dx * dx;
    ez += dz * dz;
    tt += truth.ux.data()[k] * truth.ux.data()[k] + truth.uz.data()[k] * truth.uz.data()[k];
    ++count;
  }
  if (count == 0 || !(tt > 0.0)) throw InvalidArgument("component RMSE over an empty mask");
  return {std::sqrt(ex / tt) * 100.0, std::sqrt(ez / tt) * 100.0};
}

/// Wall annulus eroded by a disk of erosion_px pixels. Pixels outside the
/// image count as outside the wall.
inline Mask wall_mask(const GroundTruthField& truth, std::size_t erosion_px) {
  const Mask& m = truth.wall_mask;
  const auto rows = static_cast<std::int64_t>(m.rows());
  const auto cols = static_cast<std::int64_t>(m.cols());
  const auto e = static_cast<std::int64_t>(erosion_px);
  Mask out(m.rows(), m.cols(), 0);
  std::size_t count = 0;
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      if (!m(std::size_t(i), std::size_t(j))) continue;
      bool keep = true;
      for (std::int64_t di = -e; di <= e && keep; ++di) {
        for (std::int64_t dj = -e; dj <= e; ++dj) {
          if (di * di + dj * dj > e * e) continue;
          const std::int64_t ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= rows || jj >= cols || !m(std::size_t(ii), std::size_t(jj))) {
            keep = false;
            break;
          }
        }
      }
      if (keep) {
        out(std::size_t(i), std::size_t(j)) = 1;
        ++count;
      }
    }
  }
  if (count == 0) throw InvalidArgument("wall mask is empty after erosion");
  return out;
}

inline std::size_t mask_count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.flat()) n += v ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Strain

struct StrainField {
  ImageGrid grid;
  Image exx;
  Image ezz;
  Image exz;
};

/// Least-squares plane fit of each displacement component over a
/// kernel_px x kernel_px neighborhood (clipped at the image border). When a
/// mask is given only masked pixels enter the fit.
inline StrainField strain_from_displacement(const DisplacementField& field, std::size_t kernel_px,
                                            const Mask* mask = nullptr) {
  require(kernel_px >= 3 && kernel_px % 2 == 1, "strain kernel must be odd and at least 3");
  const ImageGrid& g = field.grid;
  const auto rows = static_cast<std::int64_t>(g.rows);
  const auto cols = static_cast<std::int64_t>(g.cols);
  const auto h = static_cast<std::int64_t>(kernel_px / 2);
  StrainField s{g, Image(g.rows, g.cols), Image(g.rows, g.cols), Image(g.rows, g.cols)};

#pragma omp parallel for
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      // Normal equations in local coordinates (meters) centered on the pixel.
      double n = 0, sx = 0, sz = 0, sxx = 0, szz = 0, sxz = 0;
      double bx[3] = {0, 0, 0}, bz[3] = {0, 0, 0};
      for (std::int64_t di = -h; di <= h; ++di) {
        for (std::int64_t dj = -h; dj <= h; ++dj) {
          const std::int64_t ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= rows || jj >= cols) continue;
          const auto p = std::size_t(ii), q = std::size_t(jj);
          if (mask && !(*mask)(p, q)) continue;
          const double x = static_cast<double>(dj) * g.dx;
          const double z = static_cast<double>(di) * g.dz;
          n += 1;
          sx += x;
          sz += z;
          sxx += x * x;
          szz += z * z;
          sxz += x * z;
          const double ux = field.ux_m(p, q), uz = field.uz_m(p, q);
          bx[0] += ux;
          bx[1] += x * ux;
          bx[2] += z * ux;
          bz[0] += uz;
          bz[1] += x * uz;
          bz[2] += z * uz;
        }
      }
      // Solve [[n sx sz][sx sxx sxz][sz sxz szz]] * [c, d/dx, d/dz] = b by Cramer.
      const double det = n * (sxx * szz - sxz * sxz) - sx * (sx * szz - sxz * sz) +
                         sz * (sx * sxz - sxx * sz);
      if (!(std::abs(det) > 0.0)) continue;
      auto grad = [&](const double* b, double& ddx, double& ddz) {
        ddx = (n * (b[1] * szz - sxz * b[2]) - b[0] * (sx * szz - sxz * sz) +
               sz * (sx * b[2] - b[1] * sz)) / det;
        ddz = (n * (sxx * b[2] - b[1] * sxz) - sx * (sx * b[2] - b[1] * sz) +
               b[0] * (sx * sxz - sxx * sz)) / det;
      };
      double uxx, uxz, uzx, uzz;
      grad(bx, uxx, uxz);
      grad(bz, uzx, uzz);
      const auto p = std::size_t(i), q = std::size_t(j);
      s.exx(p, q) = uxx;
      s.ezz(p, q) = uzz;
      s.exz(p, q) = 0.5 * (uxz + uzx);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sweep

enum class Estimator { registration, xcorr };

inline std::string to_string(Estimator e) {
  return e == Estimator::registration ? "registration" : "xcorr";
}

/// Default image grid: 256 x 300 pixels at 0.05 mm, lateral [-6.4, 6.4] mm,
/// depth [2.5, 17.5] mm (pixel edges).
inline ImageGrid default_image_grid() {
  ImageGrid g;
  g.dx = 0.05e-3;
  g.dz = 0.05e-3;
  g.cols = 256;
  g.rows = 300;
  g.x0 = -0.5 * static_cast<double>(g.cols - 1) * g.dx;
  g.z0 = 2.5e-3 + 0.5 * g.dz;
  return g;
}

struct SceneConfig {
  VesselSpec vessel;
  ScattererOptions scatterers;
  double scatterer_margin = 1.0e-3;  // scatterer fov extends the image by this much
  ArrayGeometry array;
  double fractional_bandwidth = 0.6;
  std::size_t tx_decimation = 4;
  std::optional<double> noise_snr_db;
  ImageGrid grid = default_image_grid();
  std::size_t axial_oversampling = 2;
  bool directivity = true;
  double dynamic_range_db = 50.0;
  RegistrationConfig registration;
  ImageStage registration_input = ImageStage::envelope;  // envelope or log
  XcorrConfig xcorr;
  std::size_t erosion_px = 2;

  Region scatterer_fov() const {
    // Pixel-edge extent of the image plus the margin, clipped to z > 0.
    const Region e = grid.extent();
    return {e.x_min - 0.5 * grid.dx - scatterer_margin, e.x_max + 0.5 * grid.dx + scatterer_margin,
            std::max(1.0e-4, e.z_min - 0.5 * grid.dz - scatterer_margin),
            e.z_max + 0.5 * grid.dz + scatterer_margin};
  }

  void validate() const {
    vessel.validate();
    array.validate();
    grid.validate();
    registration.validate();
    require(registration_input == ImageStage::envelope || registration_input == ImageStage::log,
            "registration input must be the envelope or log image");
    xcorr.validate();
    require(scatterers.density_per_mm2 > 0.0, "scatterer density must be positive");
    require(scatterer_margin >= 0.0, "scatterer margin must be non-negative");
    require(tx_decimation >= 1, "tx_decimation must be at least 1");
    require(axial_oversampling >= 1, "axial_oversampling must be at least 1");
    require(dynamic_range_db > 0.0, "dynamic range must be positive");
    require(fractional_bandwidth > 0.0 && fractional_bandwidth < 2.0,
            "fractional bandwidth must lie in (0, 2)");
  }

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct EvalRow {
  double strain_percent = 0.0;
  std::string estimator;
  double rmse_percent = 0.0;
  std::size_t pixel_count = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  double lateral_error_percent = 0.0;
  double axial_error_percent = 0.0;
  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::uint64_t seed = 0;
  std::string config_hash;

  const EvalRow* find(double strain_percent, const std::string& estimator) const {
    for (const auto& r : rows) {
      if (r.estimator == estimator && std::abs(r.strain_percent - strain_percent) < 1e-9) return &r;
    }
    return nullptr;
  }
};

struct LevelArtifacts {
  double strain = 0.0;
  double pressure = 0.0;
  GroundTruthField truth;
  BeamformedImage post_envelope;
  std::map<std::string, DisplacementField> fields;
};

struct SweepResult {
  EvalReport report;
  BeamformedImage pre_envelope;
  std::vector<LevelArtifacts> levels;
};

/// Image formation for one frame: synthesis, DAS (directivity per scene),
/// envelope on the axially oversampled grid, decimation to the scene grid.
inline BeamformedImage image_frame(const ScattererCloud& cloud, const SceneConfig& scene,
                                   const std::string& frame, std::uint64_t noise_seed) {
  const Pulse pulse = excitation_pulse(scene.array, scene.fractional_bandwidth);
  const TimeWindow window = acquisition_window(scene.array, scene.grid.extent(), pulse);
  SynthOptions opt;
  opt.tx_decimation = scene.tx_decimation;
  opt.noise_snr_db = scene.noise_snr_db;
  opt.noise_seed = noise_seed;
  opt.frame = frame;
  const RfDataSet rf = synthesize_channel_data(cloud, scene.array, pulse, window, opt);
  return beamform_envelope(rf, scene.array, scene.grid, scene.directivity, scene.axial_oversampling);
}

/// Noise stream of a frame: the pre frame, or the post frame at a strain
/// (fraction). Keyed by the strain value so a level reproduces on its own.
inline std::uint64_t frame_noise_seed(std::uint64_t seed, std::optional<double> strain = std::nullopt) {
  if (!strain) return detail::splitmix64(seed);
  const auto key = static_cast<std::uint64_t>(std::llround(*strain * 1e9));
  return detail::splitmix64(seed ^ detail::splitmix64(key + 1));
}

inline DisplacementField run_estimator(Estimator e, const BeamformedImage& pre,
                                       const BeamformedImage& post, const SceneConfig& scene) {
  if (e == Estimator::registration) {
    if (scene.registration_input == ImageStage::log) {
      // Each frame is compressed against its own peak, as a scanner would.
      return register_images(log_compress(pre, scene.dynamic_range_db).values,
                             log_compress(post, scene.dynamic_range_db).values, scene.registration,
                             scene.grid);
    }
    return register_images(pre.values, post.values, scene.registration, scene.grid);
  }
  return estimate_displacement_adaptive(pre.values, post.values, scene.xcorr, scene.grid);
}

/// Runs the full pipeline at each strain level (fractions, e.g. 0.01 = 1%).
/// The pre-compression frame is shared across levels. Rows are sorted by
/// strain, then estimator name.
inline SweepResult run_sweep(const std::vector<double>& strain_levels,
                             const std::vector<Estimator>& estimators, const SceneConfig& scene,
                             std::uint64_t seed, const std::string& config_hash = {},
                             const std::function<void(const std::string&)>& progress = {}) {
  scene.validate();
  require(!strain_levels.empty(), "sweep needs at least one strain level");
  for (double s : strain_levels) require(s > 0.0 && s <= 0.2, "strain levels must lie in (0, 0.2]");
  require(!estimators.empty(), "sweep needs at least one estimator");

  SweepResult result;
  result.report.seed = seed;
  result.report.config_hash = config_hash;

  const ScattererCloud pre_cloud =
      generate_scatterers(scene.vessel, scene.scatterers, scene.scatterer_fov(), seed);
  if (progress) progress("imaging pre-compression frame");
  result.pre_envelope = image_frame(pre_cloud, scene, "pre", frame_noise_seed(seed));

  std::vector<double> levels = strain_levels;
  std::sort(levels.begin(), levels.end());
  for (std::size_t li = 0; li < levels.size(); ++li) {
    LevelArtifacts art;
    art.strain = levels[li];
    art.pressure = pressure_for_strain(scene.vessel, art.strain);
    art.truth = ground_truth_on_grid(scene.vessel, art.pressure, scene.grid);
    const Mask mask = wall_mask(art.truth, scene.erosion_px);

    if (progress) progress("strain " + std::to_string(art.strain * 100.0) + "%: imaging");
    const ScattererCloud post_cloud = displace_scatterers(pre_cloud, scene.vessel, art.pressure);
    art.post_envelope =
        image_frame(post_cloud, scene, "post", frame_noise_seed(seed, art.strain));

    std::vector<Estimator> order = estimators;
    std::sort(order.begin(), order.end(),
              [](Estimator a, Estimator b) { return to_string(a) < to_string(b); });
    order.erase(std::unique(order.begin(), order.end()), order.end());
    for (Estimator e : order) {
      if (progress) progress("strain " + std::to_string(art.strain * 100.0) + "%: " + to_string(e));
      DisplacementField f = run_estimator(e, result.pre_envelope, art.post_envelope, scene);
      EvalRow row;
      row.strain_percent = art.strain * 100.0;
      row.estimator = to_string(e);
      row.rmse_percent = relative_rmse(art.truth, f, mask);
      row.pixel_count = mask_count(mask);
      row.seed = seed;
      row.config_hash = config_hash;
      const ComponentError ce = component_rmse(art.truth, f, mask);
      row.lateral_error_percent = ce.lateral_percent;
      row.axial_error_percent = ce.axial_percent;
      result.report.rows.push_back(row);
      art.fields.emplace(to_string(e), std::move(f));
    }
    result.levels.push_back(std::move(art));
  }
  return result;
}

}  // namespace elastoscope
