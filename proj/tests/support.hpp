#pragma once

// Test fixtures: procedural band-limited textures that can be sampled at any
// real coordinate, so warped and shifted images are exact by construction.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "elastoscope/core/array2d.hpp"

namespace elastoscope::testing {

/// Sum of random plane waves with wavelengths in [min_wavelength, max_wavelength] px.
class Texture {
 public:
  explicit Texture(std::uint64_t seed, std::size_t components = 64, double min_wavelength = 5.0,
                   double max_wavelength = 18.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> wl(min_wavelength, max_wavelength);
    for (std::size_t k = 0; k < components; ++k) {
      const double th = angle(rng);
      const double w = 2.0 * std::numbers::pi / wl(rng);
      waves_.push_back({w * std::cos(th), w * std::sin(th), angle(rng)});
    }
  }

  double operator()(double x, double z) const noexcept {
    double s = 0.0;
    for (const auto& w : waves_) s += std::cos(w.kx * x + w.kz * z + w.phase);
    return s / std::sqrt(static_cast<double>(waves_.size()));
  }

  /// img(i, j) = T(j + dx, i + dz).
  Image sample(std::size_t rows, std::size_t cols, double dx = 0.0, double dz = 0.0) const {
    Image img(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) img(i, j) = (*this)(double(j) + dx, double(i) + dz);
    }
    return img;
  }

 private:
  struct Wave {
    double kx, kz, phase;
  };
  std::vector<Wave> waves_;
};

inline double max_abs(const Image& a) {
  double m = 0.0;
  for (double v : a.flat()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace elastoscope::testing
