#pragma once

// Hierarchical free-form-deformation registration.
//
// The displacement is a uniform cubic B-spline tensor product over a lattice
// of control points. Each pyramid level minimizes
//
//   mean_valid (R(x) - T(x + u(x)))^2 + lambda * mean(Laplacian(c)^2)
//
// by gradient descent with an annealed step, then hands its lattice to the
// next finer level by exact dyadic B-spline subdivision.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"

namespace elastoscope {

enum class Similarity { ssd };

struct RegistrationConfig {
  Similarity similarity = Similarity::ssd;
  std::size_t levels = 3;
  std::size_t mesh_spacing_px = 15;
  double regularization_weight = 0.05;
  std::size_t max_iterations = 50;
  double tolerance = 1e-6;
  double initial_step = 1.0;
  double annealing_rate = 0.8;

  void validate() const {
    require(levels >= 1, "registration.levels must be at least 1");
    require(mesh_spacing_px >= 2, "registration.mesh_spacing_px must be at least 2");
    require(regularization_weight >= 0.0, "registration.regularization_weight must be non-negative");
    require(max_iterations >= 1, "registration.max_iterations must be at least 1");
    require(tolerance > 0.0, "registration.tolerance must be positive");
    require(initial_step > 0.0, "registration.initial_step must be positive");
    require(annealing_rate > 0.0 && annealing_rate < 1.0,
            "registration.annealing_rate must lie in (0, 1)");
  }

  friend bool operator==(const RegistrationConfig&, const RegistrationConfig&) = default;
};

/// Dense displacement on an image grid. The pixel-unit planes are primary;
/// the meter planes are exactly pixels * pitch.
struct DisplacementField {
  ImageGrid grid;
  Image ux_px;
  Image uz_px;
  Image ux_m;
  Image uz_m;
  Mask valid;

  static DisplacementField from_pixels(const ImageGrid& grid, Image ux_px, Image uz_px, Mask valid) {
    require(ux_px.rows() == grid.rows && ux_px.cols() == grid.cols && uz_px.same_shape(ux_px) &&
                valid.rows() == grid.rows && valid.cols() == grid.cols,
            "displacement planes do not match the grid");
    DisplacementField f{grid, std::move(ux_px), std::move(uz_px), Image(grid.rows, grid.cols),
                        Image(grid.rows, grid.cols), std::move(valid)};
    for (std::size_t k = 0; k < f.ux_px.size(); ++k) {
      f.ux_m.data()[k] = f.ux_px.data()[k] * grid.dx;
      f.uz_m.data()[k] = f.uz_px.data()[k] * grid.dz;
    }
    return f;
  }

  static DisplacementField from_meters(const ImageGrid& grid, const Image& ux_m, const Image& uz_m,
                                       Mask valid) {
    Image ux(grid.rows, grid.cols), uz(grid.rows, grid.cols);
    for (std::size_t k = 0; k < ux.size(); ++k) {
      ux.data()[k] = ux_m.data()[k] / grid.dx;
      uz.data()[k] = uz_m.data()[k] / grid.dz;
    }
    DisplacementField f = from_pixels(grid, std::move(ux), std::move(uz), std::move(valid));
    f.ux_m = ux_m;
    f.uz_m = uz_m;
    return f;
  }
};

inline ImageGrid unit_grid(std::size_t rows, std::size_t cols) {
  return {0.0, 0.0, 1.0, 1.0, rows, cols};
}

// ---------------------------------------------------------------------------
// B-spline lattice

/// Control displacements (level pixels) on knots at origin + k * spacing.
/// ux/uz are indexed [knot_z][knot_x].
struct ControlGrid {
  double spacing = 1.0;
  double origin_x = 0.0;
  double origin_z = 0.0;
  Image ux;
  Image uz;
  std::size_t level = 0;

  std::size_t knots_x() const noexcept { return ux.cols(); }
  std::size_t knots_z() const noexcept { return ux.rows(); }
  std::size_t knot_count() const noexcept { return ux.size(); }
};

namespace detail {

inline std::array<double, 4> cubic_bspline_weights(double f) noexcept {
  const double f2 = f * f;
  const double f3 = f2 * f;
  const double g = 1.0 - f;
  return {g * g * g / 6.0, (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
          (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0, f3 / 6.0};
}

/// Knot index and weights for every pixel along one axis.
struct SplineAxis {
  std::vector<std::size_t> first;  // index of the first of four knots
  std::vector<std::array<double, 4>> weight;

  SplineAxis(std::size_t n, double origin, double spacing, std::size_t knots)
      : first(n), weight(n) {
    for (std::size_t p = 0; p < n; ++p) {
      const double t = (static_cast<double>(p) - origin) / spacing;
      const double fl = std::floor(t);
      const auto base = static_cast<std::int64_t>(fl) - 1;
      if (base < 0 || base + 3 >= static_cast<std::int64_t>(knots)) {
        throw InvalidArgument("control lattice does not cover the image");
      }
      first[p] = static_cast<std::size_t>(base);
      weight[p] = cubic_bspline_weights(t - fl);
    }
  }
};

inline void axis_coordinate(double t, std::int64_t& base, std::array<double, 4>& w) {
  const double fl = std::floor(t);
  base = static_cast<std::int64_t>(fl) - 1;
  w = cubic_bspline_weights(t - fl);
}

}  // namespace detail

/// Lattice covering a rows x cols image with a two-knot margin on each side.
inline ControlGrid make_control_grid(std::size_t rows, std::size_t cols, double spacing,
                                     std::size_t level = 0) {
  require(spacing > 0.0, "control spacing must be positive");
  auto count = [&](std::size_t n) {
    return static_cast<std::size_t>(std::floor((static_cast<double>(n) - 1.0 + 2.0 * spacing) / spacing)) + 4;
  };
  ControlGrid cg;
  cg.spacing = spacing;
  cg.origin_x = -2.0 * spacing;
  cg.origin_z = -2.0 * spacing;
  cg.ux = Image(count(rows), count(cols));
  cg.uz = Image(count(rows), count(cols));
  cg.level = level;
  return cg;
}

/// Displacement (level pixels) at an arbitrary point; zero outside the lattice support.
inline std::array<double, 2> evaluate_control_grid(const ControlGrid& cg, double x, double z) {
  std::int64_t bx, bz;
  std::array<double, 4> wx, wz;
  detail::axis_coordinate((x - cg.origin_x) / cg.spacing, bx, wx);
  detail::axis_coordinate((z - cg.origin_z) / cg.spacing, bz, wz);
  std::array<double, 2> u{0.0, 0.0};
  for (int a = 0; a < 4; ++a) {
    const std::int64_t kz = bz + a;
    if (kz < 0 || kz >= static_cast<std::int64_t>(cg.knots_z())) continue;
    for (int b = 0; b < 4; ++b) {
      const std::int64_t kx = bx + b;
      if (kx < 0 || kx >= static_cast<std::int64_t>(cg.knots_x())) continue;
      const double w = wz[a] * wx[b];
      u[0] += w * cg.ux(static_cast<std::size_t>(kz), static_cast<std::size_t>(kx));
      u[1] += w * cg.uz(static_cast<std::size_t>(kz), static_cast<std::size_t>(kx));
    }
  }
  return u;
}

namespace detail {

inline void dense_field(const ControlGrid& cg, const SplineAxis& ax, const SplineAxis& az,
                        Image& ux, Image& uz) {
  const std::size_t rows = az.first.size();
  const std::size_t cols = ax.first.size();
  ux = Image(rows, cols);
  uz = Image(rows, cols);
#pragma omp parallel
  {
    std::vector<double> rx(cg.knots_x()), rz(cg.knots_x());
#pragma omp for
    for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(rows); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      // Collapse the z direction first: one row of knots per pixel row.
      std::fill(rx.begin(), rx.end(), 0.0);
      std::fill(rz.begin(), rz.end(), 0.0);
      for (int a = 0; a < 4; ++a) {
        const double w = az.weight[i][a];
        const std::size_t kz = az.first[i] + a;
        for (std::size_t kx = 0; kx < cg.knots_x(); ++kx) {
          rx[kx] += w * cg.ux(kz, kx);
          rz[kx] += w * cg.uz(kz, kx);
        }
      }
      for (std::size_t j = 0; j < cols; ++j) {
        double sx = 0.0, sz = 0.0;
        for (int b = 0; b < 4; ++b) {
          sx += ax.weight[j][b] * rx[ax.first[j] + b];
          sz += ax.weight[j][b] * rz[ax.first[j] + b];
        }
        ux(i, j) = sx;
        uz(i, j) = sz;
      }
    }
  }
}

/// Bilinear sample with partial derivatives. False when (x, z) falls outside
/// the pixel-center hull of the image.
inline bool bilinear_gradient(const Image& img, double x, double z, double& value, double& gx,
                              double& gz) noexcept {
  const double xmax = static_cast<double>(img.cols()) - 1.0;
  const double zmax = static_cast<double>(img.rows()) - 1.0;
  if (!(x >= 0.0 && x <= xmax && z >= 0.0 && z <= zmax)) return false;
  auto j = static_cast<std::size_t>(x);
  auto i = static_cast<std::size_t>(z);
  if (j + 1 >= img.cols()) j = img.cols() >= 2 ? img.cols() - 2 : 0;
  if (i + 1 >= img.rows()) i = img.rows() >= 2 ? img.rows() - 2 : 0;
  const double fx = x - static_cast<double>(j);
  const double fz = z - static_cast<double>(i);
  const double v00 = img(i, j), v01 = img(i, j + 1), v10 = img(i + 1, j), v11 = img(i + 1, j + 1);
  // Convex-combination form: exact pixel values at integer coordinates.
  const double top = (1.0 - fx) * v00 + fx * v01;
  const double bot = (1.0 - fx) * v10 + fx * v11;
  value = (1.0 - fz) * top + fz * bot;
  gx = (1.0 - fz) * (v01 - v00) + fz * (v11 - v10);
  gz = bot - top;
  return true;
}

/// 5-point Laplacian over the knot lattice with missing neighbors omitted
/// (Neumann boundary), divided by spacing^2 so it approximates the
/// continuous Laplacian in pixel units. The operator is symmetric.
inline Image knot_laplacian(const Image& c, double spacing) {
  const double inv_h2 = 1.0 / (spacing * spacing);
  const std::size_t nz = c.rows(), nx = c.cols();
  Image out(nz, nx);
  for (std::size_t i = 0; i < nz; ++i) {
    for (std::size_t j = 0; j < nx; ++j) {
      const double v = c(i, j);
      double s = 0.0;
      if (i > 0) s += c(i - 1, j) - v;
      if (i + 1 < nz) s += c(i + 1, j) - v;
      if (j > 0) s += c(i, j - 1) - v;
      if (j + 1 < nx) s += c(i, j + 1) - v;
      out(i, j) = s * inv_h2;
    }
  }
  return out;
}

}  // namespace detail

/// Dense field of a lattice on a grid, in pixels (and meters via the grid pitch).
inline DisplacementField ffd_evaluate(const ControlGrid& cg, const ImageGrid& grid) {
  const detail::SplineAxis ax(grid.cols, cg.origin_x, cg.spacing, cg.knots_x());
  const detail::SplineAxis az(grid.rows, cg.origin_z, cg.spacing, cg.knots_z());
  Image ux, uz;
  detail::dense_field(cg, ax, az, ux, uz);
  return DisplacementField::from_pixels(grid, std::move(ux), std::move(uz),
                                        Mask(grid.rows, grid.cols, 1));
}

// ---------------------------------------------------------------------------
// Objective

struct ObjectiveValue {
  double value = 0.0;
  double data_term = 0.0;
  double regularization_term = 0.0;
  std::size_t valid_pixels = 0;
  Image grad_ux;  // same shape as the lattice
  Image grad_uz;
};

/// Mean SSD over pixels whose warped position lands inside the target, plus
/// lambda * mean over knots of the squared Laplacian magnitude (both components).
/// Gradient is exact for the bilinear target interpolant.
inline ObjectiveValue ssd_objective(const Image& reference, const Image& target,
                                    const ControlGrid& cg, double lambda,
                                    bool with_gradient = true) {
  require(reference.same_shape(target), "reference and target images differ in size");
  const std::size_t rows = reference.rows(), cols = reference.cols();
  const detail::SplineAxis ax(cols, cg.origin_x, cg.spacing, cg.knots_x());
  const detail::SplineAxis az(rows, cg.origin_z, cg.spacing, cg.knots_z());
  Image ux, uz;
  detail::dense_field(cg, ax, az, ux, uz);

  const std::size_t kx = cg.knots_x(), kz = cg.knots_z();
  std::vector<double> row_sum(rows, 0.0);
  std::vector<std::size_t> row_count(rows, 0);
  // Per pixel row, residual * gradient already collapsed onto x-knots.
  Image row_gx, row_gz;
  if (with_gradient) {
    row_gx = Image(rows, kx);
    row_gz = Image(rows, kx);
  }

#pragma omp parallel for
  for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(rows); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      double t, gx, gz;
      if (!detail::bilinear_gradient(target, static_cast<double>(j) + ux(i, j),
                                     static_cast<double>(i) + uz(i, j), t, gx, gz)) {
        continue;
      }
      const double e = t - reference(i, j);
      s += e * e;
      ++count;
      if (with_gradient) {
        for (int b = 0; b < 4; ++b) {
          const double w = ax.weight[j][b];
          row_gx(i, ax.first[j] + b) += w * e * gx;
          row_gz(i, ax.first[j] + b) += w * e * gz;
        }
      }
    }
    row_sum[i] = s;
    row_count[i] = count;
  }

  ObjectiveValue out;
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    total += row_sum[i];
    out.valid_pixels += row_count[i];
  }
  const double inv_n = out.valid_pixels > 0 ? 1.0 / static_cast<double>(out.valid_pixels) : 0.0;
  out.data_term = total * inv_n;

  const Image lap_x = detail::knot_laplacian(cg.ux, cg.spacing);
  const Image lap_z = detail::knot_laplacian(cg.uz, cg.spacing);
  double reg = 0.0;
  for (std::size_t k = 0; k < lap_x.size(); ++k) {
    reg += lap_x.data()[k] * lap_x.data()[k] + lap_z.data()[k] * lap_z.data()[k];
  }
  const double inv_k = 1.0 / static_cast<double>(cg.knot_count());
  out.regularization_term = lambda * reg * inv_k;
  out.value = out.data_term + out.regularization_term;

  if (with_gradient) {
    out.grad_ux = Image(kz, kx);
    out.grad_uz = Image(kz, kx);
    for (std::size_t i = 0; i < rows; ++i) {
      for (int a = 0; a < 4; ++a) {
        const double w = 2.0 * inv_n * az.weight[i][a];
        const std::size_t z = az.first[i] + a;
        for (std::size_t x = 0; x < kx; ++x) {
          out.grad_ux(z, x) += w * row_gx(i, x);
          out.grad_uz(z, x) += w * row_gz(i, x);
        }
      }
    }
    const Image ll_x = detail::knot_laplacian(lap_x, cg.spacing);
    const Image ll_z = detail::knot_laplacian(lap_z, cg.spacing);
    for (std::size_t k = 0; k < ll_x.size(); ++k) {
      out.grad_ux.data()[k] += 2.0 * lambda * inv_k * ll_x.data()[k];
      out.grad_uz.data()[k] += 2.0 * lambda * inv_k * ll_z.data()[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pyramid and hierarchy transfer

/// Level 0 is the input; each coarser level is a 2x2 block mean. A coarse
/// pixel center x_c sits at 2 x_c + 0.5 in the finer level.
inline std::vector<Image> build_pyramid(const Image& img, std::size_t levels,
                                        std::size_t min_coarse_size = 1) {
  require(levels >= 1, "pyramid needs at least one level");
  const std::size_t factor = std::size_t{1} << (levels - 1);
  require(img.rows() >= factor * min_coarse_size && img.cols() >= factor * min_coarse_size,
          "image too small for the requested pyramid depth");
  std::vector<Image> pyr{img};
  for (std::size_t l = 1; l < levels; ++l) {
    const Image& f = pyr.back();
    Image c(f.rows() / 2, f.cols() / 2);
    for (std::size_t i = 0; i < c.rows(); ++i) {
      for (std::size_t j = 0; j < c.cols(); ++j) {
        c(i, j) = 0.25 * (f(2 * i, 2 * j) + f(2 * i, 2 * j + 1) + f(2 * i + 1, 2 * j) +
                          f(2 * i + 1, 2 * j + 1));
      }
    }
    pyr.push_back(std::move(c));
  }
  return pyr;
}

namespace detail {
// Dyadic cubic B-spline subdivision of one knot sequence (K -> 2K - 1).
// End knots use linear extrapolation of the missing neighbor.
inline std::vector<double> subdivide(const std::vector<double>& c) {
  const std::size_t k = c.size();
  if (k == 1) return c;
  std::vector<double> f(2 * k - 1);
  f[0] = c[0];
  f[2 * k - 2] = c[k - 1];
  for (std::size_t i = 1; i + 1 < k; ++i) f[2 * i] = (c[i - 1] + 6.0 * c[i] + c[i + 1]) / 8.0;
  for (std::size_t i = 0; i + 1 < k; ++i) f[2 * i + 1] = 0.5 * (c[i] + c[i + 1]);
  return f;
}

inline Image subdivide_2d(const Image& c) {
  Image tmp(c.rows(), 2 * c.cols() - 1);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    const auto r = subdivide(std::vector<double>(c.row(i).begin(), c.row(i).end()));
    std::copy(r.begin(), r.end(), tmp.row(i).begin());
  }
  Image out(2 * c.rows() - 1, tmp.cols());
  std::vector<double> col(c.rows());
  for (std::size_t j = 0; j < tmp.cols(); ++j) {
    for (std::size_t i = 0; i < c.rows(); ++i) col[i] = tmp(i, j);
    const auto r = subdivide(col);
    for (std::size_t i = 0; i < r.size(); ++i) out(i, j) = r[i];
  }
  return out;
}

// Knot range [lo, hi] needed by n pixels plus one spare knot each side.
inline std::pair<std::size_t, std::size_t> needed_knots(std::size_t n, double origin,
                                                        double spacing, std::size_t knots) {
  const auto lo = static_cast<std::int64_t>(std::floor((0.0 - origin) / spacing)) - 2;
  const auto hi =
      static_cast<std::int64_t>(std::floor((static_cast<double>(n) - 1.0 - origin) / spacing)) + 3;
  return {static_cast<std::size_t>(std::max<std::int64_t>(0, lo)),
          static_cast<std::size_t>(std::min<std::int64_t>(static_cast<std::int64_t>(knots) - 1, hi))};
}
}  // namespace detail

/// Transfers a lattice one level finer: knot density doubles, the dense field
/// is preserved (values doubled, since the pixel size halves), and the result
/// is trimmed to the knots the finer image needs.
inline ControlGrid refine_control_grid(const ControlGrid& cg, std::size_t fine_rows,
                                       std::size_t fine_cols) {
  require(cg.level >= 1, "cannot refine a level-0 control grid");
  Image ux = detail::subdivide_2d(cg.ux);
  Image uz = detail::subdivide_2d(cg.uz);
  for (auto& v : ux.flat()) v *= 2.0;
  for (auto& v : uz.flat()) v *= 2.0;
  const double ox = 2.0 * cg.origin_x + 0.5;
  const double oz = 2.0 * cg.origin_z + 0.5;
  const auto [x0, x1] = detail::needed_knots(fine_cols, ox, cg.spacing, ux.cols());
  const auto [z0, z1] = detail::needed_knots(fine_rows, oz, cg.spacing, ux.rows());

  ControlGrid out;
  out.spacing = cg.spacing;
  out.origin_x = ox + static_cast<double>(x0) * cg.spacing;
  out.origin_z = oz + static_cast<double>(z0) * cg.spacing;
  out.level = cg.level - 1;
  out.ux = Image(z1 - z0 + 1, x1 - x0 + 1);
  out.uz = Image(z1 - z0 + 1, x1 - x0 + 1);
  for (std::size_t i = z0; i <= z1; ++i) {
    for (std::size_t j = x0; j <= x1; ++j) {
      out.ux(i - z0, j - x0) = ux(i, j);
      out.uz(i - z0, j - x0) = uz(i, j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Driver

/// Accepted objective values per level, coarsest first.
struct RegistrationTrace {
  std::vector<std::vector<double>> accepted;
  std::vector<std::size_t> iterations;
};

namespace detail {

inline void optimize_level(const Image& ref, const Image& tgt, ControlGrid& cg,
                           const RegistrationConfig& config, std::vector<double>* accepted,
                           std::size_t* iterations) {
  ObjectiveValue cur = ssd_objective(ref, tgt, cg, config.regularization_weight);
  if (accepted) accepted->push_back(cur.value);
  double step = config.initial_step;
  std::size_t it = 0;
  for (; it < config.max_iterations; ++it) {
    double ss = 0.0;
    for (std::size_t k = 0; k < cur.grad_ux.size(); ++k) {
      ss += cur.grad_ux.data()[k] * cur.grad_ux.data()[k] + cur.grad_uz.data()[k] * cur.grad_uz.data()[k];
    }
    const double rms = std::sqrt(ss / (2.0 * static_cast<double>(cur.grad_ux.size())));
    if (!(rms > 0.0)) break;

    // Normalized steepest-descent step: `step` is the RMS knot motion in pixels.
    ControlGrid trial = cg;
    const double scale = step / rms;
    for (std::size_t k = 0; k < cg.ux.size(); ++k) {
      trial.ux.data()[k] -= scale * cur.grad_ux.data()[k];
      trial.uz.data()[k] -= scale * cur.grad_uz.data()[k];
    }
    ObjectiveValue next = ssd_objective(ref, tgt, trial, config.regularization_weight);
    if (next.value < cur.value) {
      const double improvement = (cur.value - next.value) / std::max(std::abs(cur.value), 1e-300);
      cg = std::move(trial);
      cur = std::move(next);
      if (accepted) accepted->push_back(cur.value);
      if (improvement < config.tolerance) {
        ++it;
        break;
      }
    } else {
      step *= config.annealing_rate;
    }
  }
  if (iterations) *iterations = it;
}

}  // namespace detail

/// Estimates u such that target(x + u(x)) ~ reference(x). Intensities are
/// jointly rescaled to [0, 1] before optimization.
inline DisplacementField register_images(const Image& reference, const Image& target,
                                         const RegistrationConfig& config, const ImageGrid& grid,
                                         RegistrationTrace* trace = nullptr) {
  config.validate();
  require(reference.same_shape(target), "reference and target images differ in size");
  require(grid.rows == reference.rows() && grid.cols == reference.cols(),
          "image grid does not match the image size");
  for (double v : reference.flat()) require(std::isfinite(v), "reference image has non-finite values");
  for (double v : target.flat()) require(std::isfinite(v), "target image has non-finite values");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Image* im : {&reference, &target}) {
    for (double v : im->flat()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    return DisplacementField::from_pixels(grid, Image(grid.rows, grid.cols),
                                          Image(grid.rows, grid.cols), Mask(grid.rows, grid.cols, 1));
  }
  auto normalized = [&](const Image& im) {
    Image out = im;
    for (auto& v : out.flat()) v = (v - lo) / (hi - lo);
    return out;
  };
  const auto ref_pyr = build_pyramid(normalized(reference), config.levels, config.mesh_spacing_px);
  const auto tgt_pyr = build_pyramid(normalized(target), config.levels, config.mesh_spacing_px);

  if (trace) *trace = {};
  const std::size_t top = config.levels - 1;
  ControlGrid cg = make_control_grid(ref_pyr[top].rows(), ref_pyr[top].cols(),
                                     static_cast<double>(config.mesh_spacing_px), top);
  for (std::size_t l = top + 1; l-- > 0;) {
    if (l != top) cg = refine_control_grid(cg, ref_pyr[l].rows(), ref_pyr[l].cols());
    std::vector<double> accepted;
    std::size_t iterations = 0;
    detail::optimize_level(ref_pyr[l], tgt_pyr[l], cg, config, trace ? &accepted : nullptr,
                           &iterations);
    if (trace) {
      trace->accepted.push_back(std::move(accepted));
      trace->iterations.push_back(iterations);
    }
  }

  DisplacementField field = ffd_evaluate(cg, grid);
  const double xmax = static_cast<double>(grid.cols) - 1.0;
  const double zmax = static_cast<double>(grid.rows) - 1.0;
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const double x = static_cast<double>(j) + field.ux_px(i, j);
      const double z = static_cast<double>(i) + field.uz_px(i, j);
      field.valid(i, j) = (x >= 0.0 && x <= xmax && z >= 0.0 && z <= zmax) ? 1 : 0;
    }
  }
  return field;
}

inline DisplacementField register_images(const Image& reference, const Image& target,
                                         const RegistrationConfig& config,
                                         RegistrationTrace* trace = nullptr) {
  return register_images(reference, target, config, unit_grid(reference.rows(), reference.cols()),
                         trace);
}

}  // namespace elastoscope
