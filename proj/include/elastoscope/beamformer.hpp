#pragma once

// Synthetic-aperture delay-and-sum reconstruction, optionally weighting every
// transmit/receive pair by the directivity of both elements toward the pixel,
// plus envelope detection and log compression.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"
#include "elastoscope/fft.hpp"
#include "elastoscope/rf_synth.hpp"
#include "elastoscope/transducer.hpp"

namespace elastoscope {

enum class ImageStage { rf_sum, envelope, log };

inline std::string to_string(ImageStage s) {
  switch (s) {
    case ImageStage::rf_sum: return "rf_sum";
    case ImageStage::envelope: return "envelope";
    case ImageStage::log: return "log";
  }
  return "unknown";
}

struct BeamformedImage {
  ImageGrid grid;
  Image values;
  ImageStage stage = ImageStage::rf_sum;
  double dynamic_range_db = 0.0;  // meaningful for the log stage only
};

inline BeamformedImage das_beamform(const RfDataSet& rf, const ArrayGeometry& geom,
                                    const ImageGrid& grid, bool use_directivity) {
  grid.validate();
  require(grid.z0 > 0.0, "image grid must lie below the array (z > 0)");
  require(rf.n_elements == geom.n_elements, "RF element count does not match the array geometry");
  require(rf.sampling_rate == geom.sampling_rate && rf.sound_speed == geom.sound_speed,
          "RF timing metadata does not match the array geometry");

  const std::size_t n = geom.n_elements;
  const std::size_t rows = grid.rows;
  const auto xs = element_positions(geom);
  const double to_samples = geom.sampling_rate / geom.sound_speed;
  const double t0_samples = rf.t0 * geom.sampling_rate;
  const double last = static_cast<double>(rf.samples) - 1.0;

  BeamformedImage img{grid, Image(rows, grid.cols), ImageStage::rf_sum};

#pragma omp parallel
  {
    // Per column: one-way delay (samples) and directivity for every element.
    std::vector<double> delay(n * rows);
    std::vector<double> weight(n * rows, 1.0);
    std::vector<double> tx_delay(rows);
    std::vector<double> tx_weight(rows);
    std::vector<double> column(rows);
#pragma omp for schedule(dynamic, 1)
    for (std::int64_t jj = 0; jj < static_cast<std::int64_t>(grid.cols); ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      const double x = grid.x(j);
      for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t i = 0; i < rows; ++i) {
          const double z = grid.z(i);
          const double dx = x - xs[e];
          const double r = std::hypot(dx, z);
          delay[e * rows + i] = r * to_samples;
          if (use_directivity) weight[e * rows + i] = directivity_from_direction(geom, dx / r, z / r);
        }
      }
      std::fill(column.begin(), column.end(), 0.0);
      for (std::size_t ti = 0; ti < rf.tx_elements.size(); ++ti) {
        const std::size_t m = rf.tx_elements[ti];
        for (std::size_t i = 0; i < rows; ++i) {
          tx_delay[i] = delay[m * rows + i] - t0_samples;
          tx_weight[i] = weight[m * rows + i];
        }
        for (std::size_t rx = 0; rx < n; ++rx) {
          const float* trace = rf.trace(ti, rx).data();
          const double* d = &delay[rx * rows];
          const double* w = &weight[rx * rows];
          for (std::size_t i = 0; i < rows; ++i) {
            const double s = tx_delay[i] + d[i];
            if (s < 0.0 || s > last) continue;
            auto k = static_cast<std::size_t>(s);
            double frac = s - static_cast<double>(k);
            if (k + 1 >= rf.samples) {
              k = rf.samples - 2;
              frac = 1.0;
            }
            const double v = trace[k] + frac * (double(trace[k + 1]) - double(trace[k]));
            column[i] += (tx_weight[i] * w[i]) * v;
          }
        }
      }
      for (std::size_t i = 0; i < rows; ++i) img.values(i, j) = column[i];
    }
  }
  return img;
}

/// Magnitude of the analytic signal along each image column (axial).
inline BeamformedImage envelope_detect(const BeamformedImage& img) {
  require(img.stage == ImageStage::rf_sum, "envelope detection expects an rf_sum image");
  const std::size_t rows = img.grid.rows;
  const std::size_t cols = img.grid.cols;
  BeamformedImage out{img.grid, Image(rows, cols), ImageStage::envelope};
  if (rows == 0 || cols == 0) return out;
  const fft::Plan1D plan(rows);

#pragma omp parallel
  {
    fft::ComplexBuffer time(rows), freq(rows);
#pragma omp for
    for (std::int64_t jj = 0; jj < static_cast<std::int64_t>(cols); ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      for (std::size_t i = 0; i < rows; ++i) time[i] = {img.values(i, j), 0.0};
      plan.forward(time, freq);
      // Keep DC (and Nyquist for even lengths), double positive, zero negative.
      const std::size_t half = rows / 2;
      for (std::size_t k = 1; k < rows; ++k) {
        if (k < (rows + 1) / 2) {
          freq[k] *= 2.0;
        } else if (!(rows % 2 == 0 && k == half)) {
          freq[k] = 0.0;
        }
      }
      plan.backward(freq, time);
      const double scale = 1.0 / static_cast<double>(rows);
      for (std::size_t i = 0; i < rows; ++i) out.values(i, j) = std::abs(time[i]) * scale;
    }
  }
  return out;
}

/// 20 log10(v / max), clamped to [-dynamic_range_db, 0].
inline BeamformedImage log_compress(const BeamformedImage& img, double dynamic_range_db) {
  require(img.stage == ImageStage::envelope, "log compression expects an envelope image");
  require(dynamic_range_db > 0.0, "dynamic range must be positive");
  double peak = 0.0;
  for (double v : img.values.flat()) peak = std::max(peak, v);
  if (!(peak > 0.0)) throw InvalidArgument("log compression of an all-zero image");
  BeamformedImage out{img.grid, Image(img.grid.rows, img.grid.cols), ImageStage::log,
                      dynamic_range_db};
  const auto src = img.values.flat();
  auto dst = out.values.flat();
  for (std::size_t k = 0; k < src.size(); ++k) {
    const double db = src[k] > 0.0 ? 20.0 * std::log10(src[k] / peak) : -dynamic_range_db;
    dst[k] = std::clamp(db, -dynamic_range_db, 0.0);
  }
  return out;
}

/// Grid refined by an integer factor along z whose blocks of `factor` rows
/// are centered on the rows of the coarse grid.
inline ImageGrid axially_oversampled(const ImageGrid& grid, std::size_t factor) {
  require(factor >= 1, "axial oversampling factor must be at least 1");
  ImageGrid fine = grid;
  fine.rows = grid.rows * factor;
  fine.dz = grid.dz / static_cast<double>(factor);
  fine.z0 = grid.z0 - 0.5 * static_cast<double>(factor - 1) * fine.dz;
  return fine;
}

/// Block mean over `factor` consecutive rows; inverse of axially_oversampled.
inline BeamformedImage decimate_axial(const BeamformedImage& img, std::size_t factor) {
  require(factor >= 1 && img.grid.rows % factor == 0,
          "row count must be a multiple of the decimation factor");
  if (factor == 1) return img;
  ImageGrid coarse = img.grid;
  coarse.rows = img.grid.rows / factor;
  coarse.dz = img.grid.dz * static_cast<double>(factor);
  coarse.z0 = img.grid.z0 + 0.5 * static_cast<double>(factor - 1) * img.grid.dz;
  BeamformedImage out{coarse, Image(coarse.rows, coarse.cols), img.stage, img.dynamic_range_db};
  for (std::size_t i = 0; i < coarse.rows; ++i) {
    for (std::size_t j = 0; j < coarse.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < factor; ++k) s += img.values(i * factor + k, j);
      out.values(i, j) = s / static_cast<double>(factor);
    }
  }
  return out;
}

/// Beamform on an axially oversampled grid, envelope-detect, and average
/// back down to `grid`. The oversampling keeps the axial RF carrier above
/// Nyquist when the output pitch is near half a wavelength.
inline BeamformedImage beamform_envelope(const RfDataSet& rf, const ArrayGeometry& geom,
                                         const ImageGrid& grid, bool use_directivity,
                                         std::size_t axial_oversampling) {
  const ImageGrid fine = axially_oversampled(grid, axial_oversampling);
  BeamformedImage env = envelope_detect(das_beamform(rf, geom, fine, use_directivity));
  BeamformedImage out = decimate_axial(env, axial_oversampling);
  out.grid = grid;
  return out;
}

}  // namespace elastoscope
