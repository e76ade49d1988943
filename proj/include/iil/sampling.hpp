#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <tuple>
#include <utility>
#include <vector>

#include "iil/tensor.hpp"

namespace iil {

/// Sampling position in pixel units, (row, col) order. May lie off the map.
struct SampleCoord {
  double row = 0.0;
  double col = 0.0;
};

enum class BoundaryPolicy {
  Clamp,  // replicate edge pixels
};

/// Strided read-only view of one 2-D plane inside a larger tensor.
struct PlaneView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t row_stride = 0;
  std::size_t col_stride = 1;

  [[nodiscard]] double operator()(std::size_t r, std::size_t c) const {
    return data[r * row_stride + c * col_stride];
  }
  [[nodiscard]] std::size_t offset(std::size_t r, std::size_t c) const {
    return r * row_stride + c * col_stride;
  }
};

inline PlaneView plane_of(const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("expected a rank-2 map, got " + shape_string(map.shape()));
  return PlaneView{map.raw(), map.dim(0), map.dim(1), map.dim(1), 1};
}

/// Channel c of sample n of a batch x height x width x channels tensor.
inline PlaneView channel_plane(const Tensor& features, std::size_t n, std::size_t c) {
  const std::size_t h = features.dim(1), w = features.dim(2), ch = features.dim(3);
  return PlaneView{features.raw() + n * h * w * ch + c, h, w, w * ch, ch};
}

/// One of the four bilinear neighbours: (row, col) on the grid plus its blend weight.
struct BilinearTap {
  std::size_t row;
  std::size_t col;
  double weight;
};

/// The four blend taps for `at` on a rows x cols grid. Coordinates are clamped
/// into the rectangle first; weights are nonnegative and sum to one.
inline std::array<BilinearTap, 4> bilinear_taps(std::size_t rows, std::size_t cols, SampleCoord at) {
  const double r = std::clamp(at.row, 0.0, static_cast<double>(rows - 1));
  const double c = std::clamp(at.col, 0.0, static_cast<double>(cols - 1));
  const auto r0 = static_cast<std::size_t>(std::floor(r));
  const auto c0 = static_cast<std::size_t>(std::floor(c));
  const std::size_t r1 = std::min(r0 + 1, rows - 1);
  const std::size_t c1 = std::min(c0 + 1, cols - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  return {{{r0, c0, (1.0 - fr) * (1.0 - fc)},
           {r0, c1, (1.0 - fr) * fc},
           {r1, c0, fr * (1.0 - fc)},
           {r1, c1, fr * fc}}};
}

inline double bilinear_sample(const PlaneView& plane, SampleCoord at) {
  const auto taps = bilinear_taps(plane.rows, plane.cols, at);
  double v = 0.0;
  for (const auto& t : taps) v += t.weight * plane(t.row, t.col);
  return v;
}

inline void require_nonempty(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ShapeError("bilinear sampling on an empty map");
}

/// Bilinear blend of the four grid neighbours of `at` in a rank-2 map.
inline double bilinear_sample(const Tensor& map, SampleCoord at,
                              BoundaryPolicy /*boundary*/ = BoundaryPolicy::Clamp) {
  const PlaneView plane = plane_of(map);
  require_nonempty(plane.rows, plane.cols);
  return bilinear_sample(plane, at);
}

/// Gradient of bilinear_sample w.r.t. the map entries: the nonzero pixels that
/// received upstream * weight. Coincident taps (clamped edges) are merged.
struct PixelGrad {
  std::size_t row;
  std::size_t col;
  double value;
};

inline std::vector<PixelGrad> bilinear_sample_grad(const Tensor& map, SampleCoord at, double upstream,
                                                   BoundaryPolicy /*boundary*/ = BoundaryPolicy::Clamp) {
  const PlaneView plane = plane_of(map);
  require_nonempty(plane.rows, plane.cols);
  std::vector<PixelGrad> out;
  for (const auto& t : bilinear_taps(plane.rows, plane.cols, at)) {
    if (t.weight == 0.0) continue;
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const PixelGrad& g) { return g.row == t.row && g.col == t.col; });
    if (it != out.end())
      it->value += upstream * t.weight;
    else
      out.push_back({t.row, t.col, upstream * t.weight});
  }
  return out;
}

/// Rotates the planar offset (drow, dcol) by `angle` radians.
inline SampleCoord rotate_offset(double drow, double dcol, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {drow * c - dcol * s, drow * s + dcol * c};
}

/// True when angle is (numerically) a whole number of quarter turns; sets quarter in 0..3.
inline bool quarter_turns(double angle, int& quarters) {
  const double q = angle / (std::numbers::pi / 2.0);
  const double rq = std::round(q);
  if (std::abs(q - rq) > 1e-12) return false;
  quarters = static_cast<int>(((static_cast<long long>(rq) % 4) + 4) % 4);
  return true;
}

/// Source position of destination pixel (r, c) when a rows x cols plane is
/// rotated by `angle` about its center: dst(p) = src(center + R(-angle)(p - center)).
inline SampleCoord rotation_source(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c,
                                   double angle) {
  const double cr = 0.5 * static_cast<double>(rows - 1);
  const double cc = 0.5 * static_cast<double>(cols - 1);
  const SampleCoord d = rotate_offset(static_cast<double>(r) - cr, static_cast<double>(c) - cc, -angle);
  return {cr + d.row, cc + d.col};
}

/// Exact quarter-turn source index on a square grid, matching rotation_source.
inline std::pair<std::size_t, std::size_t> quarter_source(std::size_t n, std::size_t r, std::size_t c,
                                                          int quarters) {
  for (int q = 0; q < quarters; ++q) {
    const std::size_t nr = c;
    const std::size_t nc = n - 1 - r;
    r = nr;
    c = nc;
  }
  return {r, c};
}

/// Rotates every channel map of a batch x H x W x C tensor about its center.
/// Whole quarter turns on square maps are exact pixel permutations; other
/// angles resample bilinearly with the Clamp boundary.
inline Tensor rotate_maps(const Tensor& features, double angle) {
  if (features.rank() != 4) throw ShapeError("rotate_maps expects rank-4 features");
  const std::size_t nb = features.dim(0), h = features.dim(1), w = features.dim(2), ch = features.dim(3);
  Tensor out(features.shape());
  int quarters = 0;
  const bool exact = h == w && quarter_turns(angle, quarters);
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        double* dst = out.raw() + ((n * h + r) * w + c) * ch;
        if (exact) {
          const auto [sr, sc] = quarter_source(h, r, c, quarters);
          const double* src = features.raw() + ((n * h + sr) * w + sc) * ch;
          std::copy(src, src + ch, dst);
        } else {
          const SampleCoord at = rotation_source(h, w, r, c, angle);
          for (std::size_t k = 0; k < ch; ++k) dst[k] = bilinear_sample(channel_plane(features, n, k), at);
        }
      }
    }
  }
  return out;
}

/// Quarter-turn rotation of a square rank-2 map (quarters may be negative).
inline Tensor rot90(const Tensor& map, int quarters = 1) {
  if (map.rank() != 2 || map.dim(0) != map.dim(1)) throw ShapeError("rot90 expects a square rank-2 map");
  const std::size_t n = map.dim(0);
  const int q = ((quarters % 4) + 4) % 4;
  Tensor out(map.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const auto [sr, sc] = quarter_source(n, r, c, q);
      out[r * n + c] = map[sr * n + sc];
    }
  return out;
}

/// Linear map taking a k x k kernel to its rotated copy: for each destination
/// tap, the source taps and weights. Quarter turns are permutations; other
/// angles are bilinear with zero outside the kernel support.
struct KernelRotation {
  struct Entry {
    std::size_t src;
    double weight;
  };
  std::size_t k = 0;
  std::vector<std::vector<Entry>> taps;  // indexed by destination ky * k + kx
};

inline KernelRotation make_kernel_rotation(std::size_t k, double angle) {
  KernelRotation rot{k, std::vector<std::vector<KernelRotation::Entry>>(k * k)};
  int quarters = 0;
  const bool exact = quarter_turns(angle, quarters);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      auto& dst = rot.taps[r * k + c];
      if (exact) {
        const auto [sr, sc] = quarter_source(k, r, c, quarters);
        dst.push_back({sr * k + sc, 1.0});
        continue;
      }
      const SampleCoord at = rotation_source(k, k, r, c, angle);
      const double fr0 = std::floor(at.row), fc0 = std::floor(at.col);
      const double fr = at.row - fr0, fc = at.col - fc0;
      const long r0 = static_cast<long>(fr0), c0 = static_cast<long>(fc0);
      const long kk = static_cast<long>(k);
      const std::array<std::tuple<long, long, double>, 4> corners{{{r0, c0, (1 - fr) * (1 - fc)},
                                                                   {r0, c0 + 1, (1 - fr) * fc},
                                                                   {r0 + 1, c0, fr * (1 - fc)},
                                                                   {r0 + 1, c0 + 1, fr * fc}}};
      for (const auto& [sr, sc, wgt] : corners) {
        if (sr < 0 || sc < 0 || sr >= kk || sc >= kk || wgt == 0.0) continue;
        dst.push_back({static_cast<std::size_t>(sr * kk + sc), wgt});
      }
    }
  }
  return rot;
}

}  // namespace iil
