#pragma once

// Global attention costs, zero-shot argmax tracking, feature pyramids, local 4D costs and their fusion.

#include <string>
#include <vector>

#include "ditracker/dit.hpp"
#include "ditracker/layers.hpp"

namespace ditracker {

struct PyramidConfig {
  int num_scales = 4;
  int radius = 3;
  int stride = 4;

  void validate() const {
    require(num_scales >= 1, "PyramidConfig: num_scales must be positive");
    require(radius >= 0, "PyramidConfig: radius must be non-negative");
    require(stride >= 1, "PyramidConfig: stride must be positive");
  }
  Index window() const { return ad::window_size(radius); }
  Index cost_length() const { return window() * window(); }
  /// Pixel-to-cell divisor at scale s (1-based).
  double divisor(int scale) const { return static_cast<double>(stride) * static_cast<double>(1 << (scale - 1)); }
};

/// Row-stochastic Q_i K_j^T / sqrt(d) over the spatial grid.
template <typename T>
Matrix<T> global_cost(const QKFeatures<T>& qk, Index i, Index j) {
  const Index f = qk.shape.frames;
  require(i >= 0 && i < f && j >= 0 && j < f, "global_cost: frame index out of range");
  const Index n = qk.shape.cells();
  Matrix<T> logits;
  logits.noalias() = qk.q.value().middleRows(i * n, n) * qk.k.value().middleRows(j * n, n).transpose();
  logits *= T(1) / std::sqrt(static_cast<T>(qk.q.cols()));
  ad::detail::softmax_rows_inplace<T>(logits);
  return logits;
}

/// Argmax tracking from `start` (pixels, on `query_frame`) using raw per-frame query/key maps.
/// Cell c maps to pixel c * (out / grid) on each axis; the query frame keeps `start` verbatim.
template <typename T>
std::vector<Point2D> zero_shot_track(const Matrix<T>& q, const Matrix<T>& k, const GridShape& shape, Index query_frame,
                                     Point2D start, Index out_h, Index out_w) {
  require(query_frame >= 0 && query_frame < shape.frames, "zero_shot_track: query frame out of range");
  require(std::isfinite(start.x) && std::isfinite(start.y), "zero_shot_track: non-finite start");
  require(start.x >= 0 && start.y >= 0 && start.x <= static_cast<double>(out_w - 1) && start.y <= static_cast<double>(out_h - 1),
          "zero_shot_track: start outside the frame");
  require(q.rows() == shape.rows() && k.rows() == shape.rows() && q.cols() == k.cols(), "zero_shot_track: feature shape mismatch");
  const double sx = static_cast<double>(out_w) / static_cast<double>(shape.width);
  const double sy = static_cast<double>(out_h) / static_cast<double>(shape.height);
  const Index n = shape.cells();
  Grid2D<T> query_map(shape.height, shape.width, q.cols());
  query_map.values = q.middleRows(query_frame * n, n);
  const RowVector<T> qv = bilinear_sample(query_map, Point2<T>{static_cast<T>(start.x / sx), static_cast<T>(start.y / sy)});
  std::vector<Point2D> out(static_cast<std::size_t>(shape.frames));
  for (Index j = 0; j < shape.frames; ++j) {
    if (j == query_frame) {
      out[static_cast<std::size_t>(j)] = start;
      continue;
    }
    const Vector<T> logits = k.middleRows(j * n, n) * qv.transpose();
    const Vector<T> p = scaled_softmax(logits, q.cols());
    Index best = 0;
    for (Index c = 1; c < n; ++c)
      if (p(c) > p(best)) best = c;  // strict: ties keep the smallest index
    out[static_cast<std::size_t>(j)] = {static_cast<double>(best % shape.width) * sx, static_cast<double>(best / shape.width) * sy};
  }
  return out;
}

template <typename T>
std::vector<Point2D> zero_shot_track(const QKFeatures<T>& qk, Index query_frame, Point2D start, Index out_h, Index out_w) {
  return zero_shot_track<T>(qk.q.value(), qk.k.value(), qk.shape, query_frame, start, out_h, out_w);
}

/// Feature stack resized to S scales; scale s has (h / 2^{s-1}, w / 2^{s-1}) cells (at least 1).
template <typename T>
struct FeaturePyramid {
  std::vector<GridShape> shapes;
  std::vector<Var<T>> levels;

  FeaturePyramid() = default;
  FeaturePyramid(const Var<T>& features, const GridShape& shape, int num_scales) {
    require(num_scales >= 1, "FeaturePyramid: num_scales must be positive");
    for (int s = 0; s < num_scales; ++s) {
      const Index h = std::max<Index>(1, shape.height >> s);
      const Index w = std::max<Index>(1, shape.width >> s);
      shapes.push_back({shape.frames, h, w});
      levels.push_back(ad::resize_bilinear(features, shape, h, w, ResizeMode::kStrideAligned));
    }
  }
  int scales() const { return static_cast<int>(levels.size()); }
  Index channels() const { return levels.front().cols(); }
};

/// Window of (2 radius + 1)^2 bilinear samples around `center` (pixels) at 1-based `scale`.
template <typename T>
Var<T> sample_local(const Var<T>& features, const GridShape& shape, Index frame, Point2D center, Index radius, int scale, int stride) {
  require(scale >= 1, "sample_local: scale must be positive");
  const double div = static_cast<double>(stride) * static_cast<double>(1 << (scale - 1));
  Matrix<T> c(1, 2);
  c << static_cast<T>(center.x / div), static_cast<T>(center.y / div);
  return ad::sample_window(features, shape, {frame}, Var<T>::constant(std::move(c)), radius);
}

/// Flattened local cost of one query window against one key window.
template <typename T>
Var<T> local_cost(const Var<T>& q_patch, const Var<T>& k_patch, Index scale_dim) {
  require(q_patch.rows() == k_patch.rows() && q_patch.cols() == k_patch.cols(), "local_cost: patch shapes differ");
  return ad::local_cost(q_patch, k_patch, q_patch.rows(), 1, scale_dim);
}

enum class CostSource { kDiT, kConv, kFused };

/// Per-scale local costs; each entry has one row per (query, frame) pair.
template <typename T>
struct LocalCostVolume {
  std::vector<Var<T>> scales;
  Index radius = 0;
  CostSource source = CostSource::kDiT;
};

/// Per-scale [dit | conv] concatenation; never re-normalized across the boundary.
template <typename T>
LocalCostVolume<T> fuse_costs(const LocalCostVolume<T>& dit, const LocalCostVolume<T>& conv) {
  require(dit.scales.size() == conv.scales.size(), "fuse_costs: scale counts differ");
  require(dit.radius == conv.radius, "fuse_costs: radii differ");
  LocalCostVolume<T> out;
  out.radius = dit.radius;
  out.source = CostSource::kFused;
  for (std::size_t s = 0; s < dit.scales.size(); ++s) {
    require(dit.scales[s].rows() == conv.scales[s].rows() && dit.scales[s].cols() == conv.scales[s].cols(),
            "fuse_costs: volume shapes differ at a scale");
    out.scales.push_back(ad::concat_cols<T>({dit.scales[s], conv.scales[s]}));
  }
  return out;
}

/// Two-layer GELU MLP from the concatenated multi-scale costs to the cost embedding.
template <typename T>
class CostEmbedder {
 public:
  CostEmbedder() = default;
  CostEmbedder(ParameterSet<T>& params, Initializer& init, const std::string& name, int num_scales, Index per_scale,
               Index hidden = 256, Index out = 128) :
      num_scales_(num_scales), per_scale_(per_scale), mlp_(params, init, name, num_scales * per_scale, hidden, out) {}

  Var<T> operator()(const LocalCostVolume<T>& volume) const {
    require(static_cast<int>(volume.scales.size()) == num_scales_, "embed_costs: expected one volume per scale");
    for (const auto& v : volume.scales) require(v.cols() == per_scale_, "embed_costs: per-scale cost length mismatch");
    return mlp_(ad::concat_cols(volume.scales));
  }
  const Mlp<T>& mlp() const { return mlp_; }
  Index input_length() const { return num_scales_ * per_scale_; }

 private:
  int num_scales_ = 0;
  Index per_scale_ = 0;
  Mlp<T> mlp_;
};

}  // namespace ditracker
