#pragma once

#include <cstddef>

#include "elastoscope/core/error.hpp"

namespace elastoscope {

struct Point2 {
  double x = 0.0;  // lateral (m)
  double z = 0.0;  // axial / depth (m)
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Axis-aligned region in the imaging plane, bounds in meters.
struct Region {
  double x_min = 0.0;
  double x_max = 0.0;
  double z_min = 0.0;
  double z_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return z_max - z_min; }
  double area() const noexcept { return width() * height(); }
  bool empty() const noexcept { return !(x_max > x_min) || !(z_max > z_min); }
  bool contains(Point2 p) const noexcept {
    return p.x >= x_min && p.x <= x_max && p.z >= z_min && p.z <= z_max;
  }
  friend bool operator==(const Region&, const Region&) = default;
};

/// Cartesian pixel grid. (x0, z0) is the center of pixel (row 0, col 0);
/// rows advance in +z, columns in +x.
struct ImageGrid {
  double x0 = 0.0;
  double z0 = 0.0;
  double dx = 0.0;
  double dz = 0.0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double x(std::size_t col) const noexcept { return x0 + static_cast<double>(col) * dx; }
  double z(std::size_t row) const noexcept { return z0 + static_cast<double>(row) * dz; }
  Point2 at(std::size_t row, std::size_t col) const noexcept { return {x(col), z(row)}; }
  std::size_t pixel_count() const noexcept { return rows * cols; }

  /// Region spanned by pixel centers.
  Region extent() const noexcept {
    return {x0, x(cols == 0 ? 0 : cols - 1), z0, z(rows == 0 ? 0 : rows - 1)};
  }

  void validate() const {
    require(dx > 0.0 && dz > 0.0, "image grid pitch must be positive");
    require(rows > 0 && cols > 0, "image grid must have at least one pixel");
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

}  // namespace elastoscope
