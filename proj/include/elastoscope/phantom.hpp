#pragma once

// Vessel phantom: geometry and material of a pressurized thick-walled
// cylinder, its speckle scatterer cloud, and the closed-form plane-strain
// displacement field used as ground truth.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"

namespace elastoscope {

struct VesselSpec {
  double inner_radius = 1.5e-3;       // a (m)
  double outer_radius = 6.0e-3;       // b (m)
  double center_depth = 10.0e-3;      // axial position of the vessel axis (m)
  double elastic_modulus = 40.0e3;    // E (Pa)
  double poisson_ratio = 0.495;       // nu
  double baseline_pressure = 700.0;   // p0 (Pa)

  Point2 center() const noexcept { return {0.0, center_depth}; }

  double radius_of(Point2 p) const noexcept {
    return std::hypot(p.x, p.z - center_depth);
  }

  void validate() const {
    require(inner_radius > 0.0 && inner_radius < outer_radius,
            "vessel radii must satisfy 0 < inner_radius < outer_radius");
    require(poisson_ratio > 0.0 && poisson_ratio < 0.5, "poisson_ratio must lie in (0, 0.5)");
    require(elastic_modulus > 0.0, "elastic_modulus must be positive");
    require(center_depth > 0.0 && center_depth - outer_radius >= 0.0,
            "vessel must lie below the array face (center_depth >= outer_radius)");
  }

  friend bool operator==(const VesselSpec&, const VesselSpec&) = default;
};

struct ScattererCloud {
  std::vector<Point2> positions;
  std::vector<double> amplitudes;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return positions.size(); }
  friend bool operator==(const ScattererCloud&, const ScattererCloud&) = default;
};

struct Displacement {
  double ux = 0.0;
  double uz = 0.0;
  double magnitude() const noexcept { return std::hypot(ux, uz); }
};

/// Ground-truth displacement sampled at pixel centers. ux/uz are meters and
/// zero wherever wall_mask is false.
struct GroundTruthField {
  ImageGrid grid;
  Image ux;
  Image uz;
  Mask wall_mask;
};

// ---------------------------------------------------------------------------
// Mechanics

namespace detail {
inline bool in_annulus(const VesselSpec& spec, double r) noexcept {
  const double slack = 1e-9 * spec.outer_radius;
  return r >= spec.inner_radius - slack && r <= spec.outer_radius + slack;
}
}  // namespace detail

/// Radial displacement u(r) of a plane-strain thick-walled cylinder under
/// internal pressure p and zero external pressure:
///   u(r) = p a^2 / (E (b^2 - a^2)) * [(1+nu)(1-2nu) r + (1+nu) b^2 / r]
inline double lame_radial_displacement(const VesselSpec& spec, double pressure, double r) {
  if (!detail::in_annulus(spec, r)) {
    throw OutOfDomain("radius " + std::to_string(r) + " m is outside the vessel wall");
  }
  const double a = spec.inner_radius;
  const double b = spec.outer_radius;
  const double nu = spec.poisson_ratio;
  const double scale = pressure * a * a / (spec.elastic_modulus * (b * b - a * a));
  return scale * ((1.0 + nu) * (1.0 - 2.0 * nu) * r + (1.0 + nu) * b * b / r);
}

/// Displacement vector at a point of the wall, purely radial about the vessel
/// axis. Throws OutOfDomain for points in the lumen or outside the vessel.
inline Displacement lame_displacement(const VesselSpec& spec, double pressure, Point2 p) {
  const double dx = p.x;
  const double dz = p.z - spec.center_depth;
  const double r = std::hypot(dx, dz);
  const double u = lame_radial_displacement(spec, pressure, r);
  return {u * dx / r, u * dz / r};
}

/// Mean radial strain across the wall, (u(a) - u(b)) / (b - a).
inline double mean_radial_strain(const VesselSpec& spec, double pressure) {
  const double ua = lame_radial_displacement(spec, pressure, spec.inner_radius);
  const double ub = lame_radial_displacement(spec, pressure, spec.outer_radius);
  return (ua - ub) / (spec.outer_radius - spec.inner_radius);
}

/// Internal pressure producing the requested mean radial wall strain. The
/// response is linear, so the baseline pressure is rescaled.
inline double pressure_for_strain(const VesselSpec& spec, double target_strain) {
  require(target_strain > 0.0, "target strain must be positive");
  require(spec.baseline_pressure > 0.0, "baseline pressure must be positive");
  return spec.baseline_pressure * target_strain / mean_radial_strain(spec, spec.baseline_pressure);
}

// ---------------------------------------------------------------------------
// Scatterers

struct ScattererOptions {
  double density_per_mm2 = 12.0;
  double lumen_echogenicity = 0.0;
  friend bool operator==(const ScattererOptions&, const ScattererOptions&) = default;
};

inline ScattererCloud generate_scatterers(const VesselSpec& spec, const ScattererOptions& options,
                                          const Region& fov, std::uint64_t seed) {
  spec.validate();
  require(options.density_per_mm2 > 0.0, "scatterer density must be positive");
  require(!fov.empty(), "scatterer field of view is empty");
  const Point2 c = spec.center();
  const double b = spec.outer_radius;
  require(fov.x_min <= c.x - b && fov.x_max >= c.x + b && fov.z_min <= c.z - b &&
              fov.z_max >= c.z + b,
          "scatterer field of view must cover the vessel wall");

  const double area_mm2 = fov.area() * 1e6;
  const auto count = static_cast<std::size_t>(std::llround(options.density_per_mm2 * area_mm2));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(fov.x_min, fov.x_max);
  std::uniform_real_distribution<double> uz(fov.z_min, fov.z_max);
  std::normal_distribution<double> amp(0.0, 1.0);

  ScattererCloud cloud;
  cloud.seed = seed;
  cloud.positions.reserve(count);
  cloud.amplitudes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = ux(rng);
    const double z = uz(rng);
    double a = amp(rng);
    if (spec.radius_of({x, z}) < spec.inner_radius) a *= options.lumen_echogenicity;
    cloud.positions.push_back({x, z});
    cloud.amplitudes.push_back(a);
  }
  return cloud;
}

/// Moves wall scatterers by the Lame field; lumen and exterior stay put.
inline ScattererCloud displace_scatterers(const ScattererCloud& cloud, const VesselSpec& spec,
                                          double pressure) {
  ScattererCloud out = cloud;
  for (auto& p : out.positions) {
    const double r = spec.radius_of(p);
    if (r < spec.inner_radius || r > spec.outer_radius) continue;
    const Displacement u = lame_displacement(spec, pressure, p);
    p.x += u.ux;
    p.z += u.uz;
  }
  return out;
}

inline GroundTruthField ground_truth_on_grid(const VesselSpec& spec, double pressure,
                                             const ImageGrid& grid) {
  grid.validate();
  GroundTruthField f{grid, Image(grid.rows, grid.cols), Image(grid.rows, grid.cols),
                     Mask(grid.rows, grid.cols, 0)};
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const Point2 p = grid.at(i, j);
      const double r = spec.radius_of(p);
      if (r < spec.inner_radius || r > spec.outer_radius) continue;
      const Displacement u = lame_displacement(spec, pressure, p);
      f.ux(i, j) = u.ux;
      f.uz(i, j) = u.uz;
      f.wall_mask(i, j) = 1;
    }
  }
  return f;
}

}  // namespace elastoscope
