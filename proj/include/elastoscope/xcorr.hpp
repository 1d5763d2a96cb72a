#pragma once

// Block-matching displacement estimation by zero-mean normalized
// cross-correlation. Windows are visited from the lattice center outward and
// each search region is centered on the median of already-accepted neighbor
// estimates, so large displacements are tracked without a large search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"
#include "elastoscope/registration.hpp"

namespace elastoscope {

enum class SubsampleMethod { parabolic };

struct XcorrConfig {
  std::size_t window_axial = 49;
  std::size_t window_lateral = 5;
  double overlap = 0.5;
  int search_axial = 20;
  int search_lateral = 6;
  double rho_min = 0.5;
  SubsampleMethod subsample = SubsampleMethod::parabolic;
  bool adaptive = true;  // false: every search centered on (0, 0)

  void validate() const {
    require(window_axial >= 3 && window_lateral >= 3, "xcorr window must be at least 3x3");
    require(overlap >= 0.0 && overlap < 1.0, "xcorr overlap must lie in [0, 1)");
    require(search_axial >= 1 && search_lateral >= 1, "xcorr search must be at least 1 px");
    require(rho_min >= 0.0 && rho_min <= 1.0, "xcorr rho_min must lie in [0, 1]");
  }

  friend bool operator==(const XcorrConfig&, const XcorrConfig&) = default;
};

/// Zero-mean normalized cross-correlation of two equally sized windows.
inline double ncc(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), "ncc windows must have equal, non-zero size");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double da = a[k] - ma, db = b[k] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw UndefinedCorrelation("ncc of a zero-variance window");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double ncc(const Image& a, const Image& b) {
  require(a.same_shape(b), "ncc windows must have equal dimensions");
  return ncc(a.flat(), b.flat());
}

struct SubsampleOffset {
  double axial = 0.0;
  double lateral = 0.0;
};

/// Vertex of the parabola through (-1, minus), (0, center), (+1, plus).
inline double parabolic_vertex(double minus, double center, double plus) noexcept {
  const double den = minus - 2.0 * center + plus;
  if (den == 0.0) return 0.0;
  return (minus - plus) / (2.0 * den);
}

inline SubsampleOffset subsample_peak(double center, double axial_minus, double axial_plus,
                                      double lateral_minus, double lateral_plus) {
  require(center >= axial_minus && center >= axial_plus && center >= lateral_minus &&
              center >= lateral_plus,
          "subsample peak center must dominate its neighbors");
  return {parabolic_vertex(axial_minus, center, axial_plus),
          parabolic_vertex(lateral_minus, center, lateral_plus)};
}

/// Per-window results on the estimation lattice.
struct XcorrLattice {
  std::vector<std::size_t> center_rows;  // pixel row of each lattice row
  std::vector<std::size_t> center_cols;
  Array2D<int> search_center_axial;      // prior used for each window
  Array2D<int> search_center_lateral;
  Array2D<int> lag_axial;                // integer peak offset from the search center
  Array2D<int> lag_lateral;
  Image disp_axial;                      // final estimate, pixels
  Image disp_lateral;
  Image rho;
  Mask accepted;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<std::size_t> lattice_centers(std::size_t n, std::size_t window, std::size_t step) {
  const std::size_t half = window / 2;
  std::vector<std::size_t> c;
  for (std::size_t p = half; p + (window - 1 - half) < n; p += step) c.push_back(p);
  return c;
}

// Center outward: mid, mid+1, ..., last, then mid-1, ..., 0.
inline std::vector<std::size_t> outward_order(std::size_t n) {
  std::vector<std::size_t> order;
  const std::size_t mid = n / 2;
  for (std::size_t k = mid; k < n; ++k) order.push_back(k);
  for (std::size_t k = mid; k-- > 0;) order.push_back(k);
  return order;
}

struct WindowStats {
  std::vector<double> centered;
  double norm = 0.0;
};

}  // namespace detail

inline DisplacementField estimate_displacement_adaptive(const Image& reference, const Image& target,
                                                        const XcorrConfig& config,
                                                        const ImageGrid& grid,
                                                        XcorrLattice* lattice_out = nullptr) {
  config.validate();
  require(reference.same_shape(target), "reference and target images differ in size");
  require(grid.rows == reference.rows() && grid.cols == reference.cols(),
          "image grid does not match the image size");
  const std::size_t rows = reference.rows(), cols = reference.cols();
  const std::size_t wa = config.window_axial, wl = config.window_lateral;
  require(wa <= rows && wl <= cols, "xcorr window is larger than the image");

  auto step_of = [&](std::size_t w) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) * (1.0 - config.overlap))));
  };
  XcorrLattice lat;
  lat.center_rows = detail::lattice_centers(rows, wa, step_of(wa));
  lat.center_cols = detail::lattice_centers(cols, wl, step_of(wl));
  const std::size_t nr = lat.center_rows.size(), nc = lat.center_cols.size();
  lat.search_center_axial = Array2D<int>(nr, nc);
  lat.search_center_lateral = Array2D<int>(nr, nc);
  lat.lag_axial = Array2D<int>(nr, nc);
  lat.lag_lateral = Array2D<int>(nr, nc);
  lat.disp_axial = Image(nr, nc);
  lat.disp_lateral = Image(nr, nc);
  lat.rho = Image(nr, nc, -1.0);
  lat.accepted = Mask(nr, nc, 0);
  Mask processed(nr, nc, 0);

  const int ha = static_cast<int>(wa / 2), hl = static_cast<int>(wl / 2);
  const int sa = config.search_axial, sl = config.search_lateral;
  const std::size_t wn = wa * wl;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> surface(static_cast<std::size_t>((2 * sa + 1) * (2 * sl + 1)));

  auto correlate = [&](const detail::WindowStats& ref, int top, int left) -> double {
    // Target window with top-left corner (top, left); NaN when undefined.
    if (top < 0 || left < 0 || top + static_cast<int>(wa) > static_cast<int>(rows) ||
        left + static_cast<int>(wl) > static_cast<int>(cols)) {
      return nan;
    }
    double st = 0.0, stt = 0.0, srt = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < wa; ++i) {
      const double* trow = &target(static_cast<std::size_t>(top) + i, static_cast<std::size_t>(left));
      for (std::size_t j = 0; j < wl; ++j, ++k) {
        const double t = trow[j];
        st += t;
        stt += t * t;
        srt += ref.centered[k] * t;
      }
    }
    const double var = stt - st * st / static_cast<double>(wn);
    if (!(var > 0.0)) return nan;
    return std::clamp(srt / (ref.norm * std::sqrt(var)), -1.0, 1.0);
  };

  for (std::size_t r : detail::outward_order(nr)) {
    for (std::size_t c : detail::outward_order(nc)) {
      processed(r, c) = 1;
      const int cz = static_cast<int>(lat.center_rows[r]);
      const int cx = static_cast<int>(lat.center_cols[c]);

      // Prior: median of accepted 8-neighbors already visited.
      int pz = 0, px = 0;
      if (config.adaptive) {
        std::vector<double> nz, nx;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            if (di == 0 && dj == 0) continue;
            const auto rr = static_cast<std::int64_t>(r) + di;
            const auto cc = static_cast<std::int64_t>(c) + dj;
            if (rr < 0 || cc < 0 || rr >= static_cast<std::int64_t>(nr) || cc >= static_cast<std::int64_t>(nc)) continue;
            if (!processed(std::size_t(rr), std::size_t(cc)) || !lat.accepted(std::size_t(rr), std::size_t(cc))) continue;
            nz.push_back(lat.disp_axial(std::size_t(rr), std::size_t(cc)));
            nx.push_back(lat.disp_lateral(std::size_t(rr), std::size_t(cc)));
          }
        }
        if (!nz.empty()) {
          pz = static_cast<int>(std::lround(detail::median_of(nz)));
          px = static_cast<int>(std::lround(detail::median_of(nx)));
        }
      }
      lat.search_center_axial(r, c) = pz;
      lat.search_center_lateral(r, c) = px;

      detail::WindowStats ref;
      ref.centered.resize(wn);
      double mean = 0.0;
      for (std::size_t i = 0; i < wa; ++i) {
        for (std::size_t j = 0; j < wl; ++j) {
          mean += reference(static_cast<std::size_t>(cz - ha) + i, static_cast<std::size_t>(cx - hl) + j);
        }
      }
      mean /= static_cast<double>(wn);
      double ss = 0.0;
      for (std::size_t i = 0, k = 0; i < wa; ++i) {
        for (std::size_t j = 0; j < wl; ++j, ++k) {
          const double d = reference(static_cast<std::size_t>(cz - ha) + i, static_cast<std::size_t>(cx - hl) + j) - mean;
          ref.centered[k] = d;
          ss += d * d;
        }
      }
      ref.norm = std::sqrt(ss);
      if (!(ref.norm > 0.0)) continue;  // flat reference window: rejected

      double best = -std::numeric_limits<double>::infinity();
      int bz = 0, bx = 0;
      for (int dz = -sa; dz <= sa; ++dz) {
        for (int dx = -sl; dx <= sl; ++dx) {
          const double v = correlate(ref, cz - ha + pz + dz, cx - hl + px + dx);
          surface[static_cast<std::size_t>((dz + sa) * (2 * sl + 1) + (dx + sl))] = v;
          if (!std::isnan(v) && v > best) {
            best = v;
            bz = dz;
            bx = dx;
          }
        }
      }
      if (!std::isfinite(best)) continue;

      auto at = [&](int dz, int dx) {
        if (dz < -sa || dz > sa || dx < -sl || dx > sl) return nan;
        return surface[static_cast<std::size_t>((dz + sa) * (2 * sl + 1) + (dx + sl))];
      };
      double da = 0.0, dl = 0.0;
      {
        const double am = at(bz - 1, bx), ap = at(bz + 1, bx);
        const double lm = at(bz, bx - 1), lp = at(bz, bx + 1);
        if (!std::isnan(am) && !std::isnan(ap)) da = parabolic_vertex(am, best, ap);
        if (!std::isnan(lm) && !std::isnan(lp)) dl = parabolic_vertex(lm, best, lp);
      }
      lat.lag_axial(r, c) = bz;
      lat.lag_lateral(r, c) = bx;
      lat.rho(r, c) = best;
      lat.disp_axial(r, c) = static_cast<double>(pz + bz) + da;
      lat.disp_lateral(r, c) = static_cast<double>(px + bx) + dl;
      lat.accepted(r, c) = best >= config.rho_min ? 1 : 0;
    }
  }

  // Fill rejected windows from the median of valid neighbors, growing
  // outward from accepted regions until nothing changes.
  Mask known = lat.accepted;
  for (bool changed = true; changed;) {
    changed = false;
    Mask next = known;
    Image za = lat.disp_axial, zl = lat.disp_lateral;
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t c = 0; c < nc; ++c) {
        if (known(r, c)) continue;
        std::vector<double> va, vl;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const auto rr = static_cast<std::int64_t>(r) + di;
            const auto cc = static_cast<std::int64_t>(c) + dj;
            if ((di == 0 && dj == 0) || rr < 0 || cc < 0 || rr >= static_cast<std::int64_t>(nr) ||
                cc >= static_cast<std::int64_t>(nc)) {
              continue;
            }
            if (!known(std::size_t(rr), std::size_t(cc))) continue;
            va.push_back(lat.disp_axial(std::size_t(rr), std::size_t(cc)));
            vl.push_back(lat.disp_lateral(std::size_t(rr), std::size_t(cc)));
          }
        }
        if (va.empty()) continue;
        za(r, c) = detail::median_of(va);
        zl(r, c) = detail::median_of(vl);
        next(r, c) = 1;
        changed = true;
      }
    }
    lat.disp_axial = std::move(za);
    lat.disp_lateral = std::move(zl);
    known = std::move(next);
  }
  for (std::size_t k = 0; k < known.size(); ++k) {
    if (!known.data()[k]) {
      lat.disp_axial.data()[k] = 0.0;
      lat.disp_lateral.data()[k] = 0.0;
    }
  }

  // Bilinear upsampling from window centers to pixels; clamped outside the hull.
  Image ux(rows, cols), uz(rows, cols);
  Mask valid(rows, cols, 0);
  auto locate = [](const std::vector<std::size_t>& centers, std::size_t p, std::size_t& k,
                   double& f, bool& inside) {
    const std::size_t n = centers.size();
    inside = p >= centers.front() && p <= centers.back();
    if (n == 1 || p <= centers.front()) {
      k = 0;
      f = 0.0;
      return;
    }
    if (p >= centers.back()) {
      k = n - 2;
      f = 1.0;
      return;
    }
    k = 0;
    while (centers[k + 1] < p) ++k;
    f = static_cast<double>(p - centers[k]) / static_cast<double>(centers[k + 1] - centers[k]);
  };
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t kr;
    double fr;
    bool in_r;
    locate(lat.center_rows, i, kr, fr, in_r);
    const std::size_t kr1 = std::min(kr + 1, nr - 1);
    for (std::size_t j = 0; j < cols; ++j) {
      std::size_t kc;
      double fc;
      bool in_c;
      locate(lat.center_cols, j, kc, fc, in_c);
      const std::size_t kc1 = std::min(kc + 1, nc - 1);
      auto blend = [&](const Image& v) {
        const double top = v(kr, kc) + fc * (v(kr, kc1) - v(kr, kc));
        const double bot = v(kr1, kc) + fc * (v(kr1, kc1) - v(kr1, kc));
        return top + fr * (bot - top);
      };
      uz(i, j) = blend(lat.disp_axial);
      ux(i, j) = blend(lat.disp_lateral);
      valid(i, j) = (in_r && in_c) ? 1 : 0;
    }
  }
  if (lattice_out) *lattice_out = std::move(lat);
  return DisplacementField::from_pixels(grid, std::move(ux), std::move(uz), std::move(valid));
}

inline DisplacementField estimate_displacement_adaptive(const Image& reference, const Image& target,
                                                        const XcorrConfig& config,
                                                        XcorrLattice* lattice_out = nullptr) {
  return estimate_displacement_adaptive(reference, target, config,
                                        unit_grid(reference.rows(), reference.cols()), lattice_out);
}

}  // namespace elastoscope
