#pragma once

// Full synthetic-aperture channel data from a point-scatterer cloud.
//
// Each scatterer is a far-field point reflector. The echo for the pair
// (transmit m, receive n) is the excitation pulse delayed by the two-way path
// r_m + r_n, weighted by the element directivity on both legs and by 1/r
// spreading on each leg, normalized to r_ref = 10 mm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"
#include "elastoscope/phantom.hpp"
#include "elastoscope/transducer.hpp"

namespace elastoscope {

/// Gaussian-enveloped cosine at f0, -6 dB two-sided bandwidth of
/// fractional_bandwidth * f0, truncated where the envelope drops below 1e-4
/// of its peak, unit energy at the sampling rate.
struct Pulse {
  double center_frequency = 0.0;
  double fractional_bandwidth = 0.0;
  double sampling_rate = 0.0;
  double sigma_t = 0.0;        // envelope standard deviation (s)
  double half_duration = 0.0;  // truncation half-width (s)
  double amplitude = 1.0;      // energy normalization
  std::vector<double> samples; // sampled at fs, centered on center_index
  std::size_t center_index = 0;

  /// Continuous pulse value at time t relative to the pulse center.
  double value(double t) const noexcept {
    if (std::abs(t) > half_duration) return 0.0;
    const double env = std::exp(-0.5 * t * t / (sigma_t * sigma_t));
    return amplitude * env * std::cos(2.0 * std::numbers::pi * center_frequency * t);
  }

  double envelope(double t) const noexcept {
    if (std::abs(t) > half_duration) return 0.0;
    return amplitude * std::exp(-0.5 * t * t / (sigma_t * sigma_t));
  }
};

inline constexpr double kPulseTruncation = 1e-4;

inline Pulse excitation_pulse(const ArrayGeometry& geom, double fractional_bandwidth) {
  geom.validate();
  require(fractional_bandwidth > 0.0 && fractional_bandwidth < 2.0,
          "fractional bandwidth must lie in (0, 2)");
  Pulse p;
  p.center_frequency = geom.center_frequency;
  p.fractional_bandwidth = fractional_bandwidth;
  p.sampling_rate = geom.sampling_rate;
  // Amplitude spectrum exp(-(f-f0)^2 / (2 sf^2)) halves at |f-f0| = B/2.
  const double bandwidth = fractional_bandwidth * geom.center_frequency;
  const double sigma_f = bandwidth / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  p.sigma_t = 1.0 / (2.0 * std::numbers::pi * sigma_f);
  p.half_duration = p.sigma_t * std::sqrt(-2.0 * std::log(kPulseTruncation));

  const auto half = static_cast<std::size_t>(std::floor(p.half_duration * geom.sampling_rate));
  p.center_index = half;
  p.samples.resize(2 * half + 1);
  double energy = 0.0;
  for (std::size_t k = 0; k < p.samples.size(); ++k) {
    const double t = (static_cast<double>(k) - static_cast<double>(half)) / geom.sampling_rate;
    p.samples[k] = p.value(t);
    energy += p.samples[k] * p.samples[k];
  }
  p.amplitude = 1.0 / std::sqrt(energy);
  for (auto& s : p.samples) s *= p.amplitude;
  return p;
}

/// Channel data indexed [transmit][receive][sample]. Only the transmit
/// elements listed in tx_elements were fired; traces holds
/// tx_elements.size() * n_elements * samples values.
struct RfDataSet {
  std::size_t n_elements = 0;
  std::vector<std::uint32_t> tx_elements;
  std::size_t samples = 0;
  double sampling_rate = 0.0;
  double t0 = 0.0;
  double center_frequency = 0.0;
  double sound_speed = 0.0;
  std::string frame;  // "pre" / "post"
  std::vector<float> traces;

  std::span<float> trace(std::size_t tx_index, std::size_t rx) {
    return {traces.data() + (tx_index * n_elements + rx) * samples, samples};
  }
  std::span<const float> trace(std::size_t tx_index, std::size_t rx) const {
    return {traces.data() + (tx_index * n_elements + rx) * samples, samples};
  }

  /// Position of a transmit element in tx_elements, or npos.
  std::size_t tx_index_of(std::size_t element) const noexcept {
    for (std::size_t i = 0; i < tx_elements.size(); ++i) {
      if (tx_elements[i] == element) return i;
    }
    return npos;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

struct TimeWindow {
  double t0 = 0.0;
  std::size_t samples = 0;
};

/// Sample window covering every two-way path between the array and the
/// region, padded by the pulse half-duration on both ends.
inline TimeWindow acquisition_window(const ArrayGeometry& geom, const Region& region,
                                     const Pulse& pulse) {
  require(region.z_min > 0.0, "acquisition region must lie below the array");
  const auto xs = element_positions(geom);
  double d_min = std::numeric_limits<double>::infinity();
  double d_max = 0.0;
  for (double xe : xs) {
    const double dx = std::max({0.0, region.x_min - xe, xe - region.x_max});
    d_min = std::min(d_min, std::hypot(dx, region.z_min));
    for (double cx : {region.x_min, region.x_max}) {
      for (double cz : {region.z_min, region.z_max}) {
        d_max = std::max(d_max, std::hypot(cx - xe, cz));
      }
    }
  }
  const double fs = geom.sampling_rate;
  const double c = geom.sound_speed;
  TimeWindow w;
  w.t0 = std::max(0.0, std::floor((2.0 * d_min / c - pulse.half_duration) * fs)) / fs;
  const double t_end = 2.0 * d_max / c + pulse.half_duration;
  w.samples = static_cast<std::size_t>(std::ceil((t_end - w.t0) * fs)) + 1;
  return w;
}

struct SynthOptions {
  std::size_t tx_decimation = 1;        // fire every k-th element
  std::optional<double> noise_snr_db;   // white noise relative to data RMS
  std::uint64_t noise_seed = 0;
  double reference_range = 10.0e-3;     // r_ref of the spreading term (m)
  std::string frame = "pre";
};

inline std::vector<std::uint32_t> transmit_elements(std::size_t n_elements,
                                                    std::size_t decimation) {
  require(decimation >= 1, "tx decimation must be at least 1");
  std::vector<std::uint32_t> tx;
  for (std::size_t k = 0; k < n_elements; k += decimation) tx.push_back(static_cast<std::uint32_t>(k));
  return tx;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Pulse oversampled by kOversample for linear-interpolated fractional delays.
class PulseTable {
 public:
  static constexpr int kOversample = 256;

  explicit PulseTable(const Pulse& pulse) : fs_(pulse.sampling_rate) {
    half_samples_ = pulse.half_duration * fs_;
    const auto n = static_cast<std::size_t>(std::ceil(2.0 * half_samples_ * kOversample)) + 2;
    table_.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double offset = static_cast<double>(j) / kOversample - half_samples_;
      table_[j] = pulse.value(offset / fs_);
    }
  }

  double half_samples() const noexcept { return half_samples_; }

  /// Pulse value at an offset from its center, in samples.
  double operator()(double offset) const noexcept {
    const double pos = (offset + half_samples_) * kOversample;
    if (pos < 0.0) return 0.0;
    const auto j = static_cast<std::size_t>(pos);
    if (j + 1 >= table_.size()) return 0.0;
    const double frac = pos - static_cast<double>(j);
    return table_[j] + frac * (table_[j + 1] - table_[j]);
  }

 private:
  double fs_;
  double half_samples_ = 0.0;
  std::vector<double> table_;
};

}  // namespace detail

inline RfDataSet synthesize_channel_data(const ScattererCloud& cloud, const ArrayGeometry& geom,
                                         const Pulse& pulse, const TimeWindow& window,
                                         const SynthOptions& options = {}) {
  geom.validate();
  require(cloud.positions.size() == cloud.amplitudes.size(),
          "scatterer positions and amplitudes differ in length");
  require(window.samples > 0, "acquisition window has no samples");
  for (const auto& p : cloud.positions) {
    require(p.z > 0.0, "scatterers must lie below the array (z > 0)");
  }

  const std::size_t n = geom.n_elements;
  const double fs = geom.sampling_rate;
  const double c = geom.sound_speed;
  const auto xs = element_positions(geom);

  // Skip anechoic scatterers up front.
  std::vector<std::size_t> active;
  for (std::size_t s = 0; s < cloud.size(); ++s) {
    if (cloud.amplitudes[s] != 0.0) active.push_back(s);
  }
  const std::size_t ns = active.size();

  // Per (element, scatterer): one-way range and directivity.
  std::vector<double> range(n * ns);
  std::vector<double> weight(n * ns);
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t k = 0; k < ns; ++k) {
      const Point2 p = cloud.positions[active[k]];
      const double r = std::hypot(p.x - xs[e], p.z);
      range[e * ns + k] = r;
      weight[e * ns + k] = directivity_from_direction(geom, (p.x - xs[e]) / r, p.z / r);
    }
  }

  RfDataSet rf;
  rf.n_elements = n;
  rf.tx_elements = transmit_elements(n, options.tx_decimation);
  rf.samples = window.samples;
  rf.sampling_rate = fs;
  rf.t0 = window.t0;
  rf.center_frequency = geom.center_frequency;
  rf.sound_speed = c;
  rf.frame = options.frame;
  rf.traces.assign(rf.tx_elements.size() * n * rf.samples, 0.0f);

  const detail::PulseTable table(pulse);
  const double half = table.half_samples();
  const double rref2 = options.reference_range * options.reference_range;
  const double t0_samples = window.t0 * fs;
  const auto n_pairs = static_cast<std::int64_t>(rf.tx_elements.size() * n);
  const auto last = static_cast<double>(rf.samples - 1);

#pragma omp parallel
  {
    std::vector<double> acc(rf.samples);
#pragma omp for schedule(dynamic, 4)
    for (std::int64_t pair = 0; pair < n_pairs; ++pair) {
      const std::size_t ti = static_cast<std::size_t>(pair) / n;
      const std::size_t rx = static_cast<std::size_t>(pair) % n;
      const std::size_t tx = rf.tx_elements[ti];
      std::fill(acc.begin(), acc.end(), 0.0);
      const double* rt = &range[tx * ns];
      const double* rr = &range[rx * ns];
      const double* wt = &weight[tx * ns];
      const double* wr = &weight[rx * ns];
      for (std::size_t k = 0; k < ns; ++k) {
        const double amp =
            cloud.amplitudes[active[k]] * (wt[k] * wr[k]) * (rref2 / (rt[k] * rr[k]));
        if (amp == 0.0) continue;
        const double tau = (rt[k] + rr[k]) / c * fs - t0_samples;
        const double lo = std::max(0.0, std::ceil(tau - half));
        const double hi = std::min(last, std::floor(tau + half));
        for (double i = lo; i <= hi; i += 1.0) {
          acc[static_cast<std::size_t>(i)] += amp * table(i - tau);
        }
      }
      auto out = rf.trace(ti, rx);
      for (std::size_t i = 0; i < rf.samples; ++i) out[i] = static_cast<float>(acc[i]);
    }
  }

  if (options.noise_snr_db) {
    // Global RMS with a fixed reduction order, then per-pair noise streams.
    std::vector<double> pair_energy(static_cast<std::size_t>(n_pairs), 0.0);
#pragma omp parallel for
    for (std::int64_t pair = 0; pair < n_pairs; ++pair) {
      double e = 0.0;
      const float* t = rf.traces.data() + static_cast<std::size_t>(pair) * rf.samples;
      for (std::size_t i = 0; i < rf.samples; ++i) e += double(t[i]) * double(t[i]);
      pair_energy[static_cast<std::size_t>(pair)] = e;
    }
    double total = 0.0;
    for (double e : pair_energy) total += e;
    const double rms = std::sqrt(total / static_cast<double>(rf.traces.size()));
    const double sigma = rms * std::pow(10.0, -*options.noise_snr_db / 20.0);
#pragma omp parallel for
    for (std::int64_t pair = 0; pair < n_pairs; ++pair) {
      const std::size_t ti = static_cast<std::size_t>(pair) / n;
      const std::size_t rx = static_cast<std::size_t>(pair) % n;
      std::mt19937_64 rng(detail::splitmix64(
          options.noise_seed ^ detail::splitmix64((std::uint64_t(rf.tx_elements[ti]) << 32) | rx)));
      std::normal_distribution<double> noise(0.0, sigma);
      for (auto& v : rf.trace(ti, rx)) v = static_cast<float>(double(v) + noise(rng));
    }
  }
  return rf;
}

}  // namespace elastoscope
