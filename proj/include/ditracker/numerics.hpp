#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "ditracker/tensor.hpp"

namespace ditracker {

/// Pixel coordinates: x rightward, y downward, integer values address cell centers.
template <typename T>
struct Point2 {
  T x{};
  T y{};
};

using Point2D = Point2<double>;

/// A single-resolution multi-channel map indexed (y, x, channel).
template <typename T>
struct Grid2D {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  Matrix<T> values;  // (height * width) x channels

  Grid2D() = default;
  Grid2D(Index h, Index w, Index c) : height(h), width(w), channels(c), values(Matrix<T>::Zero(h * w, c)) {
    require(h >= 1 && w >= 1 && c >= 1, "Grid2D: dimensions must be positive");
  }
  Grid2D(Index h, Index w, Matrix<T> v) : height(h), width(w), channels(v.cols()), values(std::move(v)) {
    require(h >= 1 && w >= 1 && channels >= 1, "Grid2D: dimensions must be positive");
    require(values.rows() == h * w, "Grid2D: value rows must equal height * width");
  }

  T& at(Index y, Index x, Index c) { return values(y * width + x, c); }
  T at(Index y, Index x, Index c) const { return values(y * width + x, c); }
};

/// Four-tap bilinear stencil over a row-major h x w cell array with border clamping.
/// `dx_live` / `dy_live` are false when the coordinate was clamped (zero derivative).
template <typename T>
struct BilinearStencil {
  std::array<Index, 4> cell{};  // (y0,x0), (y0,x1), (y1,x0), (y1,x1)
  std::array<T, 4> weight{};
  T fx = 0;
  T fy = 0;
  bool dx_live = true;
  bool dy_live = true;
};

template <typename T>
BilinearStencil<T> bilinear_stencil(T x, T y, Index height, Index width) {
  BilinearStencil<T> s;
  const T max_x = static_cast<T>(width - 1);
  const T max_y = static_cast<T>(height - 1);
  s.dx_live = x > T(0) && x < max_x;
  s.dy_live = y > T(0) && y < max_y;
  const T cx = std::clamp(x, T(0), max_x);
  const T cy = std::clamp(y, T(0), max_y);
  const Index x0 = std::min<Index>(static_cast<Index>(std::floor(cx)), width - 1);
  const Index y0 = std::min<Index>(static_cast<Index>(std::floor(cy)), height - 1);
  const Index x1 = std::min<Index>(x0 + 1, width - 1);
  const Index y1 = std::min<Index>(y0 + 1, height - 1);
  s.fx = cx - static_cast<T>(x0);
  s.fy = cy - static_cast<T>(y0);
  s.cell = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  s.weight = {(T(1) - s.fy) * (T(1) - s.fx), (T(1) - s.fy) * s.fx, s.fy * (T(1) - s.fx), s.fy * s.fx};
  return s;
}

template <typename T>
RowVector<T> bilinear_sample(const Grid2D<T>& grid, const Point2<T>& point) {
  require(grid.height >= 1 && grid.width >= 1, "bilinear_sample: empty grid");
  require(std::isfinite(point.x) && std::isfinite(point.y), "bilinear_sample: non-finite point");
  const auto s = bilinear_stencil<T>(point.x, point.y, grid.height, grid.width);
  RowVector<T> out = RowVector<T>::Zero(grid.channels);
  for (int k = 0; k < 4; ++k) out.noalias() += s.weight[k] * grid.values.row(s.cell[k]);
  return out;
}

/// Source-coordinate mapping used when resizing a grid.
enum class ResizeMode {
  kCornerAligned,  // first and last cell centers coincide: src = dst * (in - 1) / (out - 1)
  kStrideAligned,  // cell i of the output sits at input coordinate i * in / out
};

inline double resize_source_coordinate(Index dst, Index in, Index out, ResizeMode mode) {
  if (mode == ResizeMode::kCornerAligned) {
    if (out == 1) return 0.0;
    return static_cast<double>(dst) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  }
  return static_cast<double>(dst) * static_cast<double>(in) / static_cast<double>(out);
}

/// Sparse row description of a bilinear resize: output cell -> four weighted input cells.
template <typename T>
std::vector<BilinearStencil<T>> resize_stencils(Index in_h, Index in_w, Index out_h, Index out_w, ResizeMode mode) {
  std::vector<BilinearStencil<T>> stencils;
  stencils.reserve(static_cast<std::size_t>(out_h * out_w));
  for (Index y = 0; y < out_h; ++y) {
    const T sy = static_cast<T>(resize_source_coordinate(y, in_h, out_h, mode));
    for (Index x = 0; x < out_w; ++x) {
      const T sx = static_cast<T>(resize_source_coordinate(x, in_w, out_w, mode));
      stencils.push_back(bilinear_stencil<T>(sx, sy, in_h, in_w));
    }
  }
  return stencils;
}

template <typename T>
Grid2D<T> interpolate_to(const Grid2D<T>& grid, Index out_h, Index out_w,
                         ResizeMode mode = ResizeMode::kCornerAligned) {
  require(out_h >= 1 && out_w >= 1, "interpolate_to: target dimensions must be positive");
  if (out_h == grid.height && out_w == grid.width) return grid;
  Grid2D<T> out(out_h, out_w, grid.channels);
  const auto stencils = resize_stencils<T>(grid.height, grid.width, out_h, out_w, mode);
  for (Index i = 0; i < out_h * out_w; ++i) {
    const auto& s = stencils[static_cast<std::size_t>(i)];
    for (int k = 0; k < 4; ++k) out.values.row(i).noalias() += s.weight[k] * grid.values.row(s.cell[k]);
  }
  return out;
}

/// Softmax of logits / sqrt(scale_dim), computed with max subtraction.
template <typename Derived>
auto scaled_softmax(const Eigen::MatrixBase<Derived>& logits, Index scale_dim) {
  using T = typename Derived::Scalar;
  require(logits.size() > 0, "scaled_softmax: empty logits");
  require(scale_dim >= 1, "scaled_softmax: scale_dim must be positive");
  const T inv = T(1) / std::sqrt(static_cast<T>(scale_dim));
  Eigen::Array<T, Eigen::Dynamic, 1> z(logits.size());
  for (Index i = 0; i < logits.size(); ++i) z(i) = logits.derived().reshaped()(i) * inv;
  z = (z - z.maxCoeff()).exp();
  z /= z.sum();
  return Vector<T>(z.matrix());
}

inline constexpr int kDefaultFourierBands = 8;

inline Index fourier_length(int num_bands) { return 4 * static_cast<Index>(num_bands) + 2; }

/// [dx, dy, then per band b: sin(2^b dx), cos(2^b dx), sin(2^b dy), cos(2^b dy)].
template <typename T>
Vector<T> fourier_encode(const Point2<T>& displacement, int num_bands = kDefaultFourierBands) {
  require(num_bands >= 1, "fourier_encode: num_bands must be positive");
  require(std::isfinite(displacement.x) && std::isfinite(displacement.y), "fourier_encode: non-finite displacement");
  Vector<T> out(fourier_length(num_bands));
  out(0) = displacement.x;
  out(1) = displacement.y;
  for (int b = 0; b < num_bands; ++b) {
    const T f = std::ldexp(T(1), b);
    out(2 + 4 * b) = std::sin(f * displacement.x);
    out(3 + 4 * b) = std::cos(f * displacement.x);
    out(4 + 4 * b) = std::sin(f * displacement.y);
    out(5 + 4 * b) = std::cos(f * displacement.y);
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace ditracker
