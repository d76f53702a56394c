#pragma once

// Iterative trajectory refinement head: token assembly and factorized time / point attention.

#include <string>
#include <vector>

#include "ditracker/layers.hpp"

namespace ditracker {

struct TrackQuery {
  Index frame = 0;
  Point2D position;
};

/// Estimates for Nq queries over F frames; row a * F + j holds query a at frame j.
template <typename T>
struct TrackEstimate {
  Var<T> positions;    // (Nq * F) x 2, pixels
  Var<T> vis_logits;   // (Nq * F) x 1
  Var<T> conf_logits;  // (Nq * F) x 1
  Index queries = 0;
  Index frames = 0;
  int iteration = 0;
};

template <typename T>
TrackEstimate<T> init_tracks(const std::vector<TrackQuery>& queries, Index frames) {
  require(frames >= 1, "init_tracks: frame count must be positive");
  require(!queries.empty(), "init_tracks: empty query list");
  const Index nq = static_cast<Index>(queries.size());
  Matrix<T> p(nq * frames, 2);
  for (Index a = 0; a < nq; ++a) {
    const auto& q = queries[static_cast<std::size_t>(a)];
    require(q.frame >= 0 && q.frame < frames, "init_tracks: query frame out of range");
    for (Index j = 0; j < frames; ++j) p.row(a * frames + j) << static_cast<T>(q.position.x), static_cast<T>(q.position.y);
  }
  TrackEstimate<T> e;
  e.positions = Var<T>::constant(std::move(p));
  e.vis_logits = Var<T>::constant(Matrix<T>::Zero(nq * frames, 1));
  e.conf_logits = Var<T>::constant(Matrix<T>::Zero(nq * frames, 1));
  e.queries = nq;
  e.frames = frames;
  return e;
}

inline Index token_width(int fourier_bands, Index embed_dim) { return 2 * fourier_length(fourier_bands) + 2 + embed_dim; }

/// Per-row [eta(P_{j-1} -> P_j), eta(P_j -> P_{j+1}), V_j, C_j, E_j]. The missing neighbour of a boundary
/// frame is the frame itself, i.e. the zero-displacement code eta((0, 0)).
template <typename T>
Var<T> assemble_tokens(const TrackEstimate<T>& est, const Var<T>& embeddings, int fourier_bands) {
  const Index n = est.queries * est.frames;
  require(embeddings.rows() == n, "assemble_tokens: one cost embedding per query and frame");
  std::vector<Index> prev(static_cast<std::size_t>(n)), next(static_cast<std::size_t>(n));
  for (Index a = 0; a < est.queries; ++a) {
    for (Index j = 0; j < est.frames; ++j) {
      const Index r = a * est.frames + j;
      prev[static_cast<std::size_t>(r)] = j == 0 ? r : r - 1;
      next[static_cast<std::size_t>(r)] = j + 1 == est.frames ? r : r + 1;
    }
  }
  const Var<T> back = est.positions - ad::gather_rows(est.positions, prev);
  const Var<T> fwd = ad::gather_rows(est.positions, next) - est.positions;
  return ad::concat_cols<T>({ad::fourier_rows(back, fourier_bands), ad::fourier_rows(fwd, fourier_bands), est.vis_logits,
                             est.conf_logits, embeddings});
}

/// Row groups for attention along time (one group per query) and along points (one group per frame).
inline std::vector<std::vector<Index>> time_groups(Index queries, Index frames) {
  std::vector<std::vector<Index>> g(static_cast<std::size_t>(queries));
  for (Index a = 0; a < queries; ++a)
    for (Index j = 0; j < frames; ++j) g[static_cast<std::size_t>(a)].push_back(a * frames + j);
  return g;
}
inline std::vector<std::vector<Index>> point_groups(Index queries, Index frames) {
  std::vector<std::vector<Index>> g(static_cast<std::size_t>(frames));
  for (Index j = 0; j < frames; ++j)
    for (Index a = 0; a < queries; ++a) g[static_cast<std::size_t>(j)].push_back(a * frames + j);
  return g;
}

struct RefinerConfig {
  Index width = 256;
  Index heads = 4;
  int blocks = 3;
  int fourier_bands = kDefaultFourierBands;
  Index embed_dim = 128;
};

template <typename T>
class Refiner {
 public:
  Refiner() = default;
  Refiner(ParameterSet<T>& params, Initializer& init, const RefinerConfig& cfg, const std::string& prefix = "refiner") : cfg_(cfg) {
    input_ = Linear<T>(params, init, prefix + ".input", token_width(cfg.fourier_bands, cfg.embed_dim), cfg.width);
    for (int b = 0; b < cfg.blocks; ++b) {
      time_.emplace_back(params, init, prefix + ".time" + std::to_string(b), cfg.width, cfg.heads);
      point_.emplace_back(params, init, prefix + ".point" + std::to_string(b), cfg.width, cfg.heads);
    }
    norm_ = LayerNorm<T>(params, prefix + ".norm", cfg.width);
    head_ = Linear<T>(params, init, prefix + ".head", cfg.width, 4, 0.1);
  }

  const RefinerConfig& config() const { return cfg_; }
  const Linear<T>& head() const { return head_; }

  /// Residuals (Nq * F) x 4: columns dx, dy, dvis, dconf. Frames carry a sinusoidal time code; the
  /// point axis carries none, so outputs are equivariant to query permutations.
  Var<T> operator()(const Var<T>& tokens, Index queries, Index frames) const {
    require(tokens.rows() == queries * frames, "refine_step: token count must be queries * frames");
    Matrix<T> tcode(queries * frames, cfg_.width);
    for (Index a = 0; a < queries; ++a)
      for (Index j = 0; j < frames; ++j) tcode.row(a * frames + j) = sinusoid<T>(static_cast<double>(j), cfg_.width, 100.0);
    Var<T> x = input_(tokens) + Var<T>::constant(std::move(tcode));
    const auto tg = time_groups(queries, frames);
    const auto pg = point_groups(queries, frames);
    for (std::size_t b = 0; b < time_.size(); ++b) {
      x = time_[b](x, tg);
      x = point_[b](x, pg);
    }
    return head_(norm_(x));
  }

 private:
  RefinerConfig cfg_;
  Linear<T> input_;
  std::vector<GroupedBlock<T>> time_, point_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

/// P += dP, V += dV, C += dC. With `detach`, the incoming estimate is treated as a constant.
template <typename T>
TrackEstimate<T> apply_residuals(const TrackEstimate<T>& est, const Var<T>& delta, bool detach) {
  require(delta.rows() == est.queries * est.frames && delta.cols() == 4, "apply_residuals: residual shape mismatch");
  TrackEstimate<T> out = est;
  auto base = [detach](const Var<T>& v) { return detach ? ad::stop_gradient(v) : v; };
  out.positions = base(est.positions) + ad::slice_cols(delta, 0, 2);
  out.vis_logits = base(est.vis_logits) + ad::slice_cols(delta, 2, 1);
  out.conf_logits = base(est.conf_logits) + ad::slice_cols(delta, 3, 1);
  out.iteration = est.iteration + 1;
  return out;
}

}  // namespace ditracker
