#pragma once

// Fused differentiable ops for feature maps, local correlation, attention and losses.

#include <cmath>
#include <vector>

#include "ditracker/autodiff.hpp"
#include "ditracker/numerics.hpp"

namespace ditracker::ad {

struct ConvGeometry {
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;

  Index out_size(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// 2-D convolution with zero padding over a (frames * H * W) x Cin stack.
/// Weight layout: (kernel * kernel * Cin) x Cout, row index (ky * kernel + kx) * Cin + cin.
template <typename T>
Var<T> conv2d(const Var<T>& x, const GridShape& in, const Var<T>& weight, const Var<T>& bias, ConvGeometry geo,
              GridShape* out_shape = nullptr) {
  const Index cin = x.cols();
  const Index k = geo.kernel;
  require(x.rows() == in.rows(), "conv2d: input rows do not match the grid shape");
  require(weight.rows() == k * k * cin, "conv2d: weight rows must equal kernel^2 * Cin");
  const Index ho = geo.out_size(in.height);
  const Index wo = geo.out_size(in.width);
  require(ho >= 1 && wo >= 1, "conv2d: output would be empty");
  const GridShape out{in.frames, ho, wo};
  if (out_shape) *out_shape = out;

  Matrix<T> cols = Matrix<T>::Zero(out.rows(), k * k * cin);
  for (Index f = 0; f < in.frames; ++f) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index r = out.row(f, oy, ox);
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * geo.stride + ky - geo.pad;
          if (iy < 0 || iy >= in.height) continue;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * geo.stride + kx - geo.pad;
            if (ix < 0 || ix >= in.width) continue;
            cols.row(r).segment((ky * k + kx) * cin, cin) = x.value().row(in.row(f, iy, ix));
          }
        }
      }
    }
  }
  Matrix<T> v;
  v.noalias() = cols * weight.value();
  v.rowwise() += bias.value().row(0);
  return make_result<T>(std::move(v), {x, weight, bias}, [cols = std::move(cols), in, out, geo, cin](Node<T>& self) {
    const auto& g = self.grad;
    if (auto* pw = live(self, 1)) pw->grad_buffer().noalias() += cols.transpose() * g;
    if (auto* pb = live(self, 2)) pb->accumulate(g.colwise().sum());
    if (auto* px = live(self, 0)) {
      const Matrix<T> dcols = g * self.parents[1]->value.transpose();
      auto& gx = px->grad_buffer();
      const Index k = geo.kernel;
      for (Index f = 0; f < out.frames; ++f) {
        for (Index oy = 0; oy < out.height; ++oy) {
          for (Index ox = 0; ox < out.width; ++ox) {
            const Index r = out.row(f, oy, ox);
            for (Index ky = 0; ky < k; ++ky) {
              const Index iy = oy * geo.stride + ky - geo.pad;
              if (iy < 0 || iy >= in.height) continue;
              for (Index kx = 0; kx < k; ++kx) {
                const Index ix = ox * geo.stride + kx - geo.pad;
                if (ix < 0 || ix >= in.width) continue;
                gx.row(in.row(f, iy, ix)) += dcols.row(r).segment((ky * k + kx) * cin, cin);
              }
            }
          }
        }
      }
    }
  });
}

/// Bilinear resize of every frame of a stack to (out_h, out_w).
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, const GridShape& in, Index out_h, Index out_w,
                       ResizeMode mode = ResizeMode::kCornerAligned) {
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dimensions must be positive");
  require(x.rows() == in.rows(), "resize_bilinear: input rows do not match the grid shape");
  if (out_h == in.height && out_w == in.width) return x;
  const GridShape out{in.frames, out_h, out_w};
  auto stencils = resize_stencils<T>(in.height, in.width, out_h, out_w, mode);
  Matrix<T> v = Matrix<T>::Zero(out.rows(), x.cols());
  const Index cells_in = in.cells();
  const Index cells_out = out.cells();
  for (Index f = 0; f < in.frames; ++f) {
    for (Index i = 0; i < cells_out; ++i) {
      const auto& s = stencils[static_cast<std::size_t>(i)];
      for (int t = 0; t < 4; ++t) v.row(f * cells_out + i).noalias() += s.weight[t] * x.value().row(f * cells_in + s.cell[t]);
    }
  }
  return make_result<T>(std::move(v), {x}, [stencils = std::move(stencils), in, cells_in, cells_out](Node<T>& self) {
    auto* px = live(self, 0);
    if (!px) return;
    auto& gx = px->grad_buffer();
    for (Index f = 0; f < in.frames; ++f) {
      for (Index i = 0; i < cells_out; ++i) {
        const auto& s = stencils[static_cast<std::size_t>(i)];
        for (int t = 0; t < 4; ++t) gx.row(f * cells_in + s.cell[t]).noalias() += s.weight[t] * self.grad.row(f * cells_out + i);
      }
    }
  });
}

inline Index window_size(Index radius) { return (2 * radius + 1) * (2 * radius + 1); }

/// Samples a (2 radius + 1)^2 window around each center of `centers` (N x 2, grid units, x then y)
/// on the frame `frame_of[n]` of the stack. Output rows: center-major, offsets row-major by (dy, dx).
/// Out-of-range coordinates are clamped to the border.
template <typename T>
Var<T> sample_window(const Var<T>& fmap, const GridShape& shape, const std::vector<Index>& frame_of,
                     const Var<T>& centers, Index radius) {
  const Index n = centers.rows();
  require(centers.cols() == 2, "sample_window: centers must be N x 2");
  require(static_cast<Index>(frame_of.size()) == n, "sample_window: one frame index per center");
  require(radius >= 0, "sample_window: radius must be non-negative");
  require(fmap.rows() == shape.rows(), "sample_window: feature rows do not match the grid shape");
  const Index p = window_size(radius);
  const Index c = fmap.cols();
  std::vector<BilinearStencil<T>> stencils(static_cast<std::size_t>(n * p));
  Matrix<T> v = Matrix<T>::Zero(n * p, c);
  for (Index i = 0; i < n; ++i) {
    require(frame_of[i] >= 0 && frame_of[i] < shape.frames, "sample_window: frame index out of range");
    const T cx = centers.value()(i, 0);
    const T cy = centers.value()(i, 1);
    require(std::isfinite(cx) && std::isfinite(cy), "sample_window: non-finite center");
    const Index base = frame_of[i] * shape.cells();
    Index o = 0;
    for (Index dy = -radius; dy <= radius; ++dy) {
      for (Index dx = -radius; dx <= radius; ++dx, ++o) {
        auto s = bilinear_stencil<T>(cx + static_cast<T>(dx), cy + static_cast<T>(dy), shape.height, shape.width);
        for (auto& cell : s.cell) cell += base;
        const Index row = i * p + o;
        for (int t = 0; t < 4; ++t) v.row(row).noalias() += s.weight[t] * fmap.value().row(s.cell[t]);
        stencils[static_cast<std::size_t>(row)] = s;
      }
    }
  }
  return make_result<T>(std::move(v), {fmap, centers}, [stencils = std::move(stencils), p](Node<T>& self) {
    const auto& g = self.grad;
    const auto& f = self.parents[0]->value;
    if (auto* pf = live(self, 0)) {
      auto& gf = pf->grad_buffer();
      for (std::size_t r = 0; r < stencils.size(); ++r) {
        const auto& s = stencils[r];
        for (int t = 0; t < 4; ++t) gf.row(s.cell[t]).noalias() += s.weight[t] * g.row(static_cast<Index>(r));
      }
    }
    if (auto* pc = live(self, 1)) {
      auto& gc = pc->grad_buffer();
      for (std::size_t r = 0; r < stencils.size(); ++r) {
        const auto& s = stencils[r];
        const Index i = static_cast<Index>(r) / p;
        const auto gr = g.row(static_cast<Index>(r));
        if (s.dx_live) {
          const T d = (T(1) - s.fy) * gr.dot(f.row(s.cell[1]) - f.row(s.cell[0])) + s.fy * gr.dot(f.row(s.cell[3]) - f.row(s.cell[2]));
          gc(i, 0) += d;
        }
        if (s.dy_live) {
          const T d = (T(1) - s.fx) * gr.dot(f.row(s.cell[2]) - f.row(s.cell[0])) + s.fx * gr.dot(f.row(s.cell[3]) - f.row(s.cell[1]));
          gc(i, 1) += d;
        }
      }
    }
  });
}

/// Local 4D matching cost. `query` holds one window per query point (Nq * P rows); `key` holds
/// `pairs_per_query` windows per query point (Nq * pairs * P rows). Each output row is the
/// row-softmax of q k^T / sqrt(scale_dim) flattened query-offset outer, key-offset inner.
template <typename T>
Var<T> local_cost(const Var<T>& query, const Var<T>& key, Index window, Index pairs_per_query, Index scale_dim) {
  require(window >= 1 && pairs_per_query >= 1, "local_cost: window and pair counts must be positive");
  require(query.cols() == key.cols(), "local_cost: query and key channel counts differ");
  require(query.rows() % window == 0, "local_cost: query rows not a multiple of the window");
  const Index nq = query.rows() / window;
  require(key.rows() == nq * pairs_per_query * window, "local_cost: key rows do not match query count");
  require(scale_dim >= 1, "local_cost: scale_dim must be positive");
  const T inv = T(1) / std::sqrt(static_cast<T>(scale_dim));
  const Index n = nq * pairs_per_query;
  Matrix<T> v(n, window * window);
  for (Index a = 0; a < nq; ++a) {
    const auto q = query.value().middleRows(a * window, window);
    for (Index j = 0; j < pairs_per_query; ++j) {
      const Index pair = a * pairs_per_query + j;
      Matrix<T> logits;
      logits.noalias() = q * key.value().middleRows(pair * window, window).transpose();
      logits *= inv;
      detail::softmax_rows_inplace<T>(logits);
      v.row(pair) = Eigen::Map<const RowVector<T>>(logits.data(), window * window);
    }
  }
  return make_result<T>(Matrix<T>(v), {query, key}, [v, window, pairs_per_query, nq, inv](Node<T>& self) {
    auto* pq = live(self, 0);
    auto* pk = live(self, 1);
    const auto& qv = self.parents[0]->value;
    const auto& kv = self.parents[1]->value;
    for (Index a = 0; a < nq; ++a) {
      for (Index j = 0; j < pairs_per_query; ++j) {
        const Index pair = a * pairs_per_query + j;
        const Eigen::Map<const Matrix<T>> prob(v.row(pair).data(), window, window);
        const Eigen::Map<const Matrix<T>> g(self.grad.row(pair).data(), window, window);
        const Matrix<T> dlogits = detail::softmax_rows_backward<T>(prob, g) * inv;
        if (pq) pq->grad_buffer().middleRows(a * window, window).noalias() += dlogits * kv.middleRows(pair * window, window);
        if (pk) pk->grad_buffer().middleRows(pair * window, window).noalias() += dlogits.transpose() * qv.middleRows(a * window, window);
      }
    }
  });
}

/// Multi-head scaled dot-product attention restricted to groups of rows. Rows in different groups
/// never attend to each other; columns are split evenly into `heads` heads.
template <typename T>
Var<T> grouped_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads,
                         const std::vector<std::vector<Index>>& groups) {
  const Index d = q.cols();
  require(heads >= 1 && d % heads == 0, "grouped_attention: width must divide into heads");
  require(k.cols() == d && v.cols() == d && k.rows() == q.rows() && v.rows() == q.rows(), "grouped_attention: shape mismatch");
  const Index dh = d / heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> out = Matrix<T>::Zero(q.rows(), d);
  std::vector<Matrix<T>> probs;
  probs.reserve(groups.size() * static_cast<std::size_t>(heads));
  for (const auto& idx : groups) {
    const Index m = static_cast<Index>(idx.size());
    Matrix<T> qg(m, d), kg(m, d), vg(m, d);
    for (Index i = 0; i < m; ++i) {
      qg.row(i) = q.value().row(idx[i]);
      kg.row(i) = k.value().row(idx[i]);
      vg.row(i) = v.value().row(idx[i]);
    }
    for (Index h = 0; h < heads; ++h) {
      Matrix<T> s;
      s.noalias() = qg.middleCols(h * dh, dh) * kg.middleCols(h * dh, dh).transpose();
      s *= inv;
      detail::softmax_rows_inplace<T>(s);
      const Matrix<T> o = s * vg.middleCols(h * dh, dh);
      for (Index i = 0; i < m; ++i) out.row(idx[i]).segment(h * dh, dh) = o.row(i);
      probs.push_back(std::move(s));
    }
  }
  return make_result<T>(std::move(out), {q, k, v}, [groups, probs = std::move(probs), heads, dh, inv](Node<T>& self) {
    auto* pq = live(self, 0);
    auto* pk = live(self, 1);
    auto* pv = live(self, 2);
    const auto& qv = self.parents[0]->value;
    const auto& kv = self.parents[1]->value;
    const auto& vv = self.parents[2]->value;
    const Index d = qv.cols();
    std::size_t pi = 0;
    for (const auto& idx : groups) {
      const Index m = static_cast<Index>(idx.size());
      Matrix<T> qg(m, d), kg(m, d), vg(m, d), gg(m, d);
      for (Index i = 0; i < m; ++i) {
        qg.row(i) = qv.row(idx[i]);
        kg.row(i) = kv.row(idx[i]);
        vg.row(i) = vv.row(idx[i]);
        gg.row(i) = self.grad.row(idx[i]);
      }
      Matrix<T> dq = Matrix<T>::Zero(m, d), dk = Matrix<T>::Zero(m, d), dv = Matrix<T>::Zero(m, d);
      for (Index h = 0; h < heads; ++h, ++pi) {
        const Matrix<T>& p = probs[pi];
        const auto go = gg.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh).noalias() = p.transpose() * go;
        const Matrix<T> dp = go * vg.middleCols(h * dh, dh).transpose();
        const Matrix<T> ds = detail::softmax_rows_backward<T>(p, dp) * inv;
        dq.middleCols(h * dh, dh).noalias() = ds * kg.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qg.middleCols(h * dh, dh);
      }
      for (Index i = 0; i < m; ++i) {
        if (pq) pq->grad_buffer().row(idx[i]) += dq.row(i);
        if (pk) pk->grad_buffer().row(idx[i]) += dk.row(i);
        if (pv) pv->grad_buffer().row(idx[i]) += dv.row(i);
      }
    }
  });
}

/// Row-wise Fourier displacement encoding of an N x 2 matrix of (dx, dy).
template <typename T>
Var<T> fourier_rows(const Var<T>& disp, int num_bands) {
  require(disp.cols() == 2, "fourier_rows: input must be N x 2");
  require(num_bands >= 1, "fourier_rows: num_bands must be positive");
  const Index n = disp.rows();
  Matrix<T> v(n, fourier_length(num_bands));
  for (Index i = 0; i < n; ++i) {
    const Vector<T> e = fourier_encode<T>({disp.value()(i, 0), disp.value()(i, 1)}, num_bands);
    v.row(i) = e.transpose();
  }
  return make_result<T>(std::move(v), {disp}, [num_bands](Node<T>& self) {
    auto* pd = live(self, 0);
    if (!pd) return;
    auto& gd = pd->grad_buffer();
    const auto& out = self.grad;
    const auto& x = pd->value;
    for (Index i = 0; i < x.rows(); ++i) {
      T gx = out(i, 0);
      T gy = out(i, 1);
      for (int b = 0; b < num_bands; ++b) {
        const T f = std::ldexp(T(1), b);
        gx += f * (out(i, 2 + 4 * b) * std::cos(f * x(i, 0)) - out(i, 3 + 4 * b) * std::sin(f * x(i, 0)));
        gy += f * (out(i, 4 + 4 * b) * std::cos(f * x(i, 1)) - out(i, 5 + 4 * b) * std::sin(f * x(i, 1)));
      }
      gd(i, 0) += gx;
      gd(i, 1) += gy;
    }
  });
}

/// Mean over rows of weight_i * Huber(||pred_i - target_i||) with quadratic zone up to `threshold`:
/// 0.5 e^2 for e <= threshold, threshold * (e - threshold / 2) beyond.
template <typename T>
Var<T> huber_rows(const Var<T>& pred, const Matrix<T>& target, const Vector<T>& weight, T threshold) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "huber_rows: shape mismatch");
  require(weight.size() == pred.rows(), "huber_rows: one weight per row");
  const Index n = pred.rows();
  Matrix<T> diff = pred.value() - target;
  T total = 0;
  for (Index i = 0; i < n; ++i) {
    const T e = diff.row(i).norm();
    const T h = e <= threshold ? T(0.5) * e * e : threshold * (e - T(0.5) * threshold);
    total += weight(i) * h;
  }
  return make_result<T>(Matrix<T>::Constant(1, 1, total / static_cast<T>(n)), {pred},
                        [diff = std::move(diff), weight, threshold, n](Node<T>& self) {
                          auto* pp = live(self, 0);
                          if (!pp) return;
                          const T g = self.grad(0, 0) / static_cast<T>(n);
                          auto& gp = pp->grad_buffer();
                          for (Index i = 0; i < n; ++i) {
                            const T e = diff.row(i).norm();
                            if (e == T(0)) continue;
                            const T factor = e <= threshold ? T(1) : threshold / e;
                            gp.row(i) += g * weight(i) * factor * diff.row(i);
                          }
                        });
}

/// Mean binary cross-entropy between sigmoid(logits) and {0,1} targets, in the stable softplus form.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Vector<T>& target) {
  require(logits.size() == target.size(), "bce_with_logits: one target per logit");
  const Index n = logits.size();
  T total = 0;
  for (Index i = 0; i < n; ++i) {
    const T x = logits.value().reshaped()(i);
    total += std::max(x, T(0)) - x * target(i) + std::log1p(std::exp(-std::abs(x)));
  }
  return make_result<T>(Matrix<T>::Constant(1, 1, total / static_cast<T>(n)), {logits}, [target, n](Node<T>& self) {
    auto* pl = live(self, 0);
    if (!pl) return;
    const T g = self.grad(0, 0) / static_cast<T>(n);
    auto& gl = pl->grad_buffer();
    for (Index i = 0; i < n; ++i) {
      const T x = pl->value.reshaped()(i);
      gl.reshaped()(i) += g * (T(1) / (T(1) + std::exp(-x)) - target(i));
    }
  });
}

}  // namespace ditracker::ad
