#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"

namespace elastoscope {

/// Linear array description. Element centers sit at z = 0, spaced by pitch
/// and centered on x = 0. element_height is carried for completeness; the
/// imaging model is 2D.
struct ArrayGeometry {
  std::size_t n_elements = 128;
  double center_frequency = 7.5e6;   // Hz
  double element_width = 0.2789e-3;  // m
  double pitch = 0.3048e-3;          // m
  double kerf = 0.025e-3;            // m
  double element_height = 4.0e-3;    // m
  double sampling_rate = 100.0e6;    // Hz
  double sound_speed = 1540.0;       // m/s

  double wavelength() const noexcept { return sound_speed / center_frequency; }

  void validate() const {
    require(n_elements >= 2, "n_elements must be at least 2");
    require(center_frequency > 0.0, "center_frequency must be positive");
    require(sampling_rate > 2.0 * center_frequency, "sampling_rate must exceed 2 * center_frequency");
    require(pitch > 0.0, "pitch must be positive");
    require(element_width > 0.0, "element_width must be positive");
    require(sound_speed > 0.0, "sound_speed must be positive");
  }

  friend bool operator==(const ArrayGeometry&, const ArrayGeometry&) = default;
};

/// x_k = (k - (N-1)/2) * pitch.
inline std::vector<double> element_positions(const ArrayGeometry& geom) {
  std::vector<double> x(geom.n_elements);
  const double mid = 0.5 * static_cast<double>(geom.n_elements - 1);
  for (std::size_t k = 0; k < geom.n_elements; ++k) {
    x[k] = (static_cast<double>(k) - mid) * geom.pitch;
  }
  return x;
}

namespace detail {
inline double sinc_pi(double arg) noexcept {
  // sin(arg) / arg with the removable singularity filled in.
  if (std::abs(arg) < 1e-8) return 1.0 - arg * arg / 6.0;
  return std::sin(arg) / arg;
}
}  // namespace detail

/// Element directivity from the direction cosines of the element-to-point
/// ray: sinc(pi d/lambda sin(theta)) * cos(theta). Zero behind the baffle.
inline double directivity_from_direction(const ArrayGeometry& geom, double sin_theta,
                                         double cos_theta) noexcept {
  if (cos_theta <= 0.0) return 0.0;
  const double k = std::numbers::pi * geom.element_width / geom.wavelength();
  return detail::sinc_pi(k * sin_theta) * cos_theta;
}

/// f(theta) for an angle measured from the element normal (z-axis).
inline double directivity_weight(const ArrayGeometry& geom, double theta) noexcept {
  if (std::abs(theta) >= 0.5 * std::numbers::pi) return 0.0;
  return directivity_from_direction(geom, std::sin(theta), std::cos(theta));
}

/// Two-way travel time from transmit element m to point p and back to
/// receive element n.
inline double pair_delay(const ArrayGeometry& geom, const std::vector<double>& element_x,
                         Point2 p, std::size_t m, std::size_t n) {
  require(p.z > 0.0, "pair_delay requires a point below the array (z > 0)");
  const double rm = std::hypot(p.x - element_x[m], p.z);
  const double rn = std::hypot(p.x - element_x[n], p.z);
  return (rm + rn) / geom.sound_speed;
}

inline double pair_delay(const ArrayGeometry& geom, Point2 p, std::size_t m, std::size_t n) {
  return pair_delay(geom, element_positions(geom), p, m, n);
}

}  // namespace elastoscope
