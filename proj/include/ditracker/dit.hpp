#pragma once

// Toy video diffusion transformer with full 3D attention over all (frame, y, x) tokens.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/layers.hpp"
#include "ditracker/video.hpp"

namespace ditracker {

struct DiTConfig {
  int layers = 6;
  int heads = 4;
  int d_head = 32;
  int patch_stride = 4;
  int max_frames = 12;
  int lora_rank = 128;
  int extract_layer = 4;  // 1-based
  int extract_head = 0;   // 0-based
  int mlp_ratio = 4;
  int height = 64;  // native input resolution
  int width = 96;

  Index d_model() const { return static_cast<Index>(heads) * d_head; }
  Index d_video() const { return 3 * static_cast<Index>(patch_stride) * patch_stride; }
  void validate() const;
  nlohmann::json to_json() const;
  static DiTConfig from_json(const nlohmann::json& j);
};

/// Pixel-to-latent scaling of the fixed patch encoder.
inline constexpr double kLatentScale = 4.0;

template <typename T>
struct LatentVideo {
  GridShape shape;  // frames x h x w
  Matrix<T> latents;  // (f * h * w) x d_video
};

/// Per-frame query/key maps of one head: (frames * h * w) x d_head each.
template <typename T>
struct QKFeatures {
  GridShape shape;
  Var<T> q;
  Var<T> k;
  int source_layer = 0;
  int source_head = 0;
};

/// Per-frame fixed patch encoder of stride r. Latent cell (cy, cx) holds the r x r pixel patch whose
/// top-left pixel is (cy * r - r / 2, cx * r - r / 2), border-replicated and mapped to
/// (pixel - 0.5) * kLatentScale; channel index (ky * r + kx) * 3 + c.
template <typename T>
LatentVideo<T> encode_frames(const Video& video, int stride) {
  require(stride >= 1, "encode_frames: stride must be positive");
  require(video.height % stride == 0 && video.width % stride == 0, "encode_frames: frame size not divisible by the stride");
  const Index h = video.height / stride;
  const Index w = video.width / stride;
  LatentVideo<T> out;
  out.shape = {video.frames, h, w};
  out.latents.resize(out.shape.rows(), 3 * stride * stride);
  const Index half = stride / 2;
  for (Index f = 0; f < video.frames; ++f) {
    for (Index cy = 0; cy < h; ++cy) {
      for (Index cx = 0; cx < w; ++cx) {
        const Index row = out.shape.row(f, cy, cx);
        for (Index ky = 0; ky < stride; ++ky) {
          const Index py = std::clamp<Index>(cy * stride + ky - half, 0, video.height - 1);
          for (Index kx = 0; kx < stride; ++kx) {
            const Index px = std::clamp<Index>(cx * stride + kx - half, 0, video.width - 1);
            for (int c = 0; c < 3; ++c) {
              out.latents(row, (ky * stride + kx) * 3 + c) = static_cast<T>((video.at(f, py, px, c) - 0.5) * kLatentScale);
            }
          }
        }
      }
    }
  }
  return out;
}

/// Consecutive chunks of `chunk_len` new frames; every chunk after the first is prefixed with frame 0.
std::vector<std::vector<Index>> chunk_plan(Index frames, Index chunk_len);

template <typename T>
class DiTModel {
 public:
  struct Layer {
    LayerNorm<T> norm1;
    Linear<T> q, k, v, o;
    LayerNorm<T> norm2;
    Mlp<T> mlp;
    // Low-rank adapters, present only once attached: down (d_model x rank) then up (rank x d_model).
    std::array<Var<T>, 4> lora_down;
    std::array<Var<T>, 4> lora_up;
  };

  DiTModel(ParameterSet<T>& params, const DiTConfig& config, std::uint64_t seed, const std::string& prefix = "dit") :
      params_(&params), config_(config), prefix_(prefix) {
    config_.validate();
    Initializer init(seed);
    const Index d = config_.d_model();
    embed_ = Linear<T>(params, init, prefix + ".embed", config_.d_video(), d);
    time_fc1_ = Linear<T>(params, init, prefix + ".time.fc1", kTimeDim, d);
    time_fc2_ = Linear<T>(params, init, prefix + ".time.fc2", d, d);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string n = prefix + ".layers." + std::to_string(l);
      Layer layer;
      layer.norm1 = LayerNorm<T>(params, n + ".norm1", d);
      layer.q = Linear<T>(params, init, n + ".q", d, d);
      layer.k = Linear<T>(params, init, n + ".k", d, d);
      layer.v = Linear<T>(params, init, n + ".v", d, d);
      layer.o = Linear<T>(params, init, n + ".o", d, d);
      layer.norm2 = LayerNorm<T>(params, n + ".norm2", d);
      layer.mlp = Mlp<T>(params, init, n + ".mlp", d, config_.mlp_ratio * d, d);
      layers_.push_back(std::move(layer));
    }
    norm_out_ = LayerNorm<T>(params, prefix + ".norm_out", d);
    out_ = Linear<T>(params, init, prefix + ".out", d, config_.d_video());
  }

  const DiTConfig& config() const { return config_; }
  DiTConfig& mutable_config() { return config_; }
  bool has_lora() const { return lora_layers_ > 0; }
  int lora_layers() const { return lora_layers_; }

  /// Adds zero-initialized low-rank adapters to the q, k, v and o projections of layers 1..up_to_layer,
  /// freezes every base parameter of this model and leaves only the adapters trainable.
  void attach_lora(int rank, int up_to_layer, std::uint64_t seed) {
    require(rank >= 1, "attach_lora: rank must be positive");
    require(rank <= config_.d_model(), "attach_lora: rank exceeds d_model");
    require(up_to_layer >= 1 && up_to_layer <= config_.layers, "attach_lora: layer out of range");
    require(lora_layers_ == 0, "attach_lora: adapters already attached");
    for (auto& e : params_->entries()) {
      if (e.name.rfind(prefix_ + ".", 0) == 0) {
        e.trainable = false;
        e.var.set_requires_grad(false);
      }
    }
    Initializer init(seed);
    const Index d = config_.d_model();
    static constexpr std::array<const char*, 4> kProj{"q", "k", "v", "o"};
    for (int l = 0; l < up_to_layer; ++l) {
      for (std::size_t p = 0; p < 4; ++p) {
        const std::string n = prefix_ + ".layers." + std::to_string(l) + "." + kProj[p];
        layers_[static_cast<std::size_t>(l)].lora_down[p] = params_->add(n + ".lora_down", init.uniform<T>(d, rank, 1.0 / std::sqrt(static_cast<double>(d))));
        layers_[static_cast<std::size_t>(l)].lora_up[p] = params_->add(n + ".lora_up", Matrix<T>::Zero(rank, d));
      }
    }
    lora_layers_ = up_to_layer;
    config_.lora_rank = rank;
  }

  /// Marks an attachment recorded in a checkpoint whose adapter tensors are already in the set.
  void bind_lora(int up_to_layer) {
    static constexpr std::array<const char*, 4> kProj{"q", "k", "v", "o"};
    for (int l = 0; l < up_to_layer; ++l) {
      for (std::size_t p = 0; p < 4; ++p) {
        const std::string n = prefix_ + ".layers." + std::to_string(l) + "." + kProj[p];
        layers_[static_cast<std::size_t>(l)].lora_down[p] = params_->get(n + ".lora_down");
        layers_[static_cast<std::size_t>(l)].lora_up[p] = params_->get(n + ".lora_up");
      }
    }
    lora_layers_ = up_to_layer;
  }

  /// Velocity prediction for noisy latents at time t.
  Var<T> velocity(const LatentVideo<T>& latents, double t) const {
    return velocity(latents, std::vector<double>(static_cast<std::size_t>(latents.shape.frames), t));
  }

  /// Velocity prediction with one noise time per frame.
  Var<T> velocity(const LatentVideo<T>& latents, const std::vector<double>& frame_t) const {
    Var<T> x = tokens(latents, frame_t);
    const std::vector<std::vector<Index>> groups{all_rows(x.rows())};
    for (int l = 0; l < config_.layers; ++l) x = block(l, x, groups, nullptr, nullptr);
    return out_(norm_out_(x));
  }

  /// Query/key projections (all heads, N x d_model) of layers 1..up_to_layer at t = 0.
  std::vector<std::pair<Var<T>, Var<T>>> extract_all(const LatentVideo<T>& latents, int up_to_layer) const {
    require(up_to_layer >= 1 && up_to_layer <= config_.layers, "extract: layer out of range");
    Var<T> x = tokens(latents, std::vector<double>(static_cast<std::size_t>(latents.shape.frames), 0.0));
    const std::vector<std::vector<Index>> groups{all_rows(x.rows())};
    std::vector<std::pair<Var<T>, Var<T>>> out;
    for (int l = 0; l < up_to_layer; ++l) {
      Var<T> q, k;
      const bool last = l + 1 == up_to_layer;
      x = block(l, x, groups, &q, &k, last);
      out.emplace_back(q, k);
    }
    return out;
  }

  /// Pre-attention query and key maps of head `head` (0-based) at layer `layer` (1-based), t = 0.
  QKFeatures<T> extract_qk(const LatentVideo<T>& latents, int layer, int head) const {
    require(layer >= 1 && layer <= config_.layers, "extract_qk: layer out of range");
    require(head >= 0 && head < config_.heads, "extract_qk: head out of range");
    auto all = extract_all(latents, layer);
    QKFeatures<T> f;
    f.shape = latents.shape;
    f.q = ad::slice_cols(all.back().first, static_cast<Index>(head) * config_.d_head, config_.d_head);
    f.k = ad::slice_cols(all.back().second, static_cast<Index>(head) * config_.d_head, config_.d_head);
    f.source_layer = layer;
    f.source_head = head;
    return f;
  }

  QKFeatures<T> extract_qk(const Video& video) const {
    return extract_qk(encode_frames<T>(video, config_.patch_stride), config_.extract_layer, config_.extract_head);
  }

  /// Extraction over chunks sharing frame 0 as an anchor; returns features for all frames in order.
  QKFeatures<T> chunked_extract(const Video& video, Index chunk_len) const {
    require(chunk_len >= 2, "chunked_extract: chunk_len must be at least 2");
    if (chunk_len >= video.frames) return extract_qk(video);
    const auto plan = chunk_plan(video.frames, chunk_len);
    std::vector<Var<T>> qs, ks;
    GridShape shape;
    for (std::size_t c = 0; c < plan.size(); ++c) {
      const auto f = extract_qk(video.select(plan[c]));
      shape = f.shape;
      const Index cells = f.shape.cells();
      // Frames after the first chunk drop the duplicate anchor slice.
      const Index skip = c == 0 ? 0 : 1;
      const Index keep = static_cast<Index>(plan[c].size()) - skip;
      qs.push_back(ad::slice_rows(f.q, skip * cells, keep * cells));
      ks.push_back(ad::slice_rows(f.k, skip * cells, keep * cells));
    }
    QKFeatures<T> out;
    out.shape = {video.frames, shape.height, shape.width};
    out.q = ad::concat_rows(qs);
    out.k = ad::concat_rows(ks);
    out.source_layer = config_.extract_layer;
    out.source_head = config_.extract_head;
    return out;
  }

 private:
  static constexpr Index kTimeDim = 64;

  static std::vector<Index> all_rows(Index n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }

  /// Factorized sinusoidal position code: thirds of the width for frame, row and column.
  Matrix<T> positions(const GridShape& s) const {
    const Index d = config_.d_model();
    const Index seg = 2 * (d / 6);
    Matrix<T> pe = Matrix<T>::Zero(s.rows(), d);
    for (Index f = 0; f < s.frames; ++f)
      for (Index y = 0; y < s.height; ++y)
        for (Index x = 0; x < s.width; ++x) {
          const Index r = s.row(f, y, x);
          pe.row(r).segment(0, seg) = sinusoid<T>(static_cast<double>(f), seg, 100.0);
          pe.row(r).segment(seg, seg) = sinusoid<T>(static_cast<double>(y), seg, 100.0);
          pe.row(r).segment(2 * seg, seg) = sinusoid<T>(static_cast<double>(x), seg, 100.0);
        }
    return pe;
  }

  Var<T> tokens(const LatentVideo<T>& latents, const std::vector<double>& frame_t) const {
    require(latents.latents.cols() == config_.d_video(), "DiT: latent width does not match d_video");
    require(latents.latents.rows() == latents.shape.rows(), "DiT: latent rows do not match shape");
    require(static_cast<Index>(frame_t.size()) == latents.shape.frames, "DiT: need one noise time per frame");
    Var<T> x = embed_(Var<T>::constant(latents.latents));
    x = x + Var<T>::constant(positions(latents.shape));
    const bool shared = std::all_of(frame_t.begin(), frame_t.end(), [&](double t) { return t == frame_t.front(); });
    if (shared) return ad::add_row(x, time_embedding(std::vector<double>{frame_t.front()}));
    std::vector<Index> frame_of(static_cast<std::size_t>(x.rows()));
    for (Index r = 0; r < x.rows(); ++r) frame_of[static_cast<std::size_t>(r)] = r / latents.shape.cells();
    return x + ad::gather_rows(time_embedding(frame_t), std::move(frame_of));
  }

  /// One row per time value.
  Var<T> time_embedding(const std::vector<double>& ts) const {
    Matrix<T> codes(static_cast<Index>(ts.size()), kTimeDim);
    for (std::size_t i = 0; i < ts.size(); ++i) codes.row(static_cast<Index>(i)) = sinusoid<T>(ts[i] * 1000.0, kTimeDim);
    return time_fc2_(ad::silu(time_fc1_(Var<T>::constant(std::move(codes)))));
  }

  Var<T> project(const Layer& layer, int which, const Linear<T>& lin, const Var<T>& h, bool adapted) const {
    Var<T> y = lin(h);
    if (adapted) y = y + ad::matmul(ad::matmul(h, layer.lora_down[static_cast<std::size_t>(which)]), layer.lora_up[static_cast<std::size_t>(which)]);
    return y;
  }

  Var<T> block(int l, const Var<T>& x, const std::vector<std::vector<Index>>& groups, Var<T>* q_out, Var<T>* k_out,
               bool stop_after_qk = false) const {
    const Layer& layer = layers_[static_cast<std::size_t>(l)];
    const bool adapted = l < lora_layers_;
    const Var<T> h = layer.norm1(x);
    const Var<T> q = project(layer, 0, layer.q, h, adapted);
    const Var<T> k = project(layer, 1, layer.k, h, adapted);
    if (q_out) *q_out = q;
    if (k_out) *k_out = k;
    if (stop_after_qk) return x;
    const Var<T> v = project(layer, 2, layer.v, h, adapted);
    const Var<T> a = ad::grouped_attention(q, k, v, config_.heads, groups);
    const Var<T> x1 = x + project(layer, 3, layer.o, a, adapted);
    return x1 + layer.mlp(layer.norm2(x1));
  }

  ParameterSet<T>* params_;
  DiTConfig config_;
  std::string prefix_;
  Linear<T> embed_, time_fc1_, time_fc2_, out_;
  LayerNorm<T> norm_out_;
  std::vector<Layer> layers_;
  int lora_layers_ = 0;
};

}  // namespace ditracker
