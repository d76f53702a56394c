#pragma once

// End-to-end tracker: DiT and conv features, multi-scale local costs, fusion, embedding, refinement.

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ditracker/conv_backbone.hpp"
#include "ditracker/dit.hpp"
#include "ditracker/matching.hpp"
#include "ditracker/refiner.hpp"

namespace ditracker {

enum class FusionMode { kNone, kFeatureConcat, kCostSum, kCostConcat };

FusionMode parse_fusion(const std::string& name);
std::string fusion_name(FusionMode mode);

struct TrackerConfig {
  DiTConfig dit;
  bool use_lora = true;
  FusionMode fusion = FusionMode::kCostConcat;
  PyramidConfig pyramid;
  Index conv_channels = 64;
  Index embed_hidden = 256;
  RefinerConfig refiner;
  int iterations = 4;
  Index chunk_len = 8;
  bool detach_between_iterations = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrackerConfig from_json(const nlohmann::json& j);

  bool uses_conv() const { return fusion != FusionMode::kNone; }
  /// Length of one scale's cost vector after fusion.
  Index cost_length() const { return pyramid.cost_length() * (fusion == FusionMode::kCostConcat ? 2 : 1); }
};

/// Backbone outputs for one clip; reusable across iterations and, for frozen backbones, across steps.
template <typename T>
struct BackboneFeatures {
  QKFeatures<T> qk;
  std::optional<ConvFeatures<T>> conv;
};

template <typename T>
struct TrackHooks {
  /// Called once per iteration with the key sample centers (pixels) used to build that iteration's costs.
  std::function<void(int iteration, const Matrix<T>& centers)> on_resample;
};

template <typename T>
struct TrackOutput {
  std::vector<TrackEstimate<T>> iterations;  // 1..T
  const TrackEstimate<T>& final() const { return iterations.back(); }
};

template <typename T>
class TrackerModel {
 public:
  TrackerModel(const TrackerConfig& config, std::uint64_t seed) :
      config_(config), params_(std::make_unique<ParameterSet<T>>()), dit_(*params_, config.dit, seed, "dit") {
    config_.validate();
    if (config_.uses_conv()) conv_ = ConvBackbone<T>(*params_, seed + 1, config_.conv_channels, "conv");
    Initializer init(seed + 2);
    embed_ = CostEmbedder<T>(*params_, init, "embed", config_.pyramid.num_scales, config_.cost_length(), config_.embed_hidden,
                             config_.refiner.embed_dim);
    Initializer rinit(seed + 3);
    refiner_ = Refiner<T>(*params_, rinit, config_.refiner, "refiner");
    // The base DiT is never trained by the tracker; adapters are the only DiT parameters that move.
    for (auto& e : params_->entries()) {
      if (e.name.rfind("dit.", 0) == 0) {
        e.trainable = false;
        e.var.set_requires_grad(false);
      }
    }
  }
  TrackerModel(const TrackerModel&) = delete;
  TrackerModel& operator=(const TrackerModel&) = delete;

  const TrackerConfig& config() const { return config_; }
  ParameterSet<T>& params() { return *params_; }
  const ParameterSet<T>& params() const { return *params_; }
  DiTModel<T>& dit() { return dit_; }
  const DiTModel<T>& dit() const { return dit_; }
  const Refiner<T>& refiner() const { return refiner_; }

  /// Attaches LoRA to layers 1..extract_layer when the config asks for it.
  void prepare_adapters(std::uint64_t seed) {
    if (config_.use_lora && !dit_.has_lora()) dit_.attach_lora(config_.dit.lora_rank, config_.dit.extract_layer, seed);
  }

  /// Copies the base DiT tensors (names "dit.*" without adapters) from a pretrained parameter set.
  template <typename U>
  void load_pretrained_dit(const ParameterSet<U>& source) {
    for (auto& e : params_->entries()) {
      if (e.name.rfind("dit.", 0) != 0 || e.name.find(".lora_") != std::string::npos) continue;
      require(source.contains(e.name), "load_pretrained_dit: checkpoint lacks " + e.name);
      const auto& v = source.at(e.name).var.value();
      require(v.rows() == e.var.rows() && v.cols() == e.var.cols(), "load_pretrained_dit: shape mismatch for " + e.name);
      e.var.mutable_value() = v.template cast<T>();
    }
    pretrained_dit_ = true;
  }
  void mark_pretrained_dit(bool flag = true) { pretrained_dit_ = flag; }
  bool has_pretrained_dit() const { return pretrained_dit_; }

  BackboneFeatures<T> conv_features(const Video& video) const {
    require(video.height == config_.dit.height && video.width == config_.dit.width, "track: video resolution differs from the model's");
    BackboneFeatures<T> f;
    if (conv_) f.conv = (*conv_)(video);
    return f;
  }

  BackboneFeatures<T> features(const Video& video) const {
    BackboneFeatures<T> f = conv_features(video);
    f.qk = dit_.chunked_extract(video, config_.chunk_len);
    return f;
  }

  TrackOutput<T> track(const Video& video, const std::vector<TrackQuery>& queries, int iterations, const TrackHooks<T>& hooks = {}) const {
    return track(features(video), queries, iterations, hooks);
  }

  TrackOutput<T> track(const BackboneFeatures<T>& feats, const std::vector<TrackQuery>& queries, int iterations,
                       const TrackHooks<T>& hooks = {}) const {
    require(!queries.empty(), "track: empty query list");
    require(iterations >= 1, "track: iterations must be positive");
    const Index frames = feats.qk.shape.frames;
    const Index nq = static_cast<Index>(queries.size());
    const auto& pc = config_.pyramid;
    const Index radius = pc.radius;
    const Index window = pc.window();
    const double px_h = static_cast<double>(config_.dit.height - 1);
    const double px_w = static_cast<double>(config_.dit.width - 1);
    for (const auto& q : queries) {
      require(q.frame >= 0 && q.frame < frames, "track: query frame out of range");
      require(std::isfinite(q.position.x) && std::isfinite(q.position.y), "track: non-finite query");
      require(q.position.x >= 0 && q.position.y >= 0 && q.position.x <= px_w && q.position.y <= px_h, "track: query outside the frame");
    }

    // Sources: each has query-side and key-side pyramids and a dot-product scale.
    struct Source {
      FeaturePyramid<T> query, key;
      Index scale_dim = 0;
      std::vector<Var<T>> query_windows;  // per scale, Nq * P rows
    };
    std::vector<Source> sources;
    const Index d_head = feats.qk.q.cols();
    if (config_.fusion == FusionMode::kFeatureConcat) {
      require(feats.conv.has_value(), "track: feature concatenation needs conv features");
      const Var<T> qf = ad::concat_cols<T>({feats.qk.q, feats.conv->phi});
      const Var<T> kf = ad::concat_cols<T>({feats.qk.k, feats.conv->phi});
      sources.push_back({FeaturePyramid<T>(qf, feats.qk.shape, pc.num_scales), FeaturePyramid<T>(kf, feats.qk.shape, pc.num_scales),
                         d_head + feats.conv->phi.cols(), {}});
    } else {
      sources.push_back({FeaturePyramid<T>(feats.qk.q, feats.qk.shape, pc.num_scales),
                         FeaturePyramid<T>(feats.qk.k, feats.qk.shape, pc.num_scales), d_head, {}});
      if (config_.uses_conv()) {
        require(feats.conv.has_value(), "track: fusion needs conv features");
        require(feats.conv->shape == feats.qk.shape, "track: conv and DiT grids differ");
        FeaturePyramid<T> phi(feats.conv->phi, feats.conv->shape, pc.num_scales);
        sources.push_back({phi, phi, feats.conv->phi.cols(), {}});
      }
    }

    // Query windows are sampled once at the query point and reused by every iteration.
    std::vector<Index> query_frames;
    Matrix<T> query_px(nq, 2);
    for (Index a = 0; a < nq; ++a) {
      query_frames.push_back(queries[static_cast<std::size_t>(a)].frame);
      query_px.row(a) << static_cast<T>(queries[static_cast<std::size_t>(a)].position.x),
          static_cast<T>(queries[static_cast<std::size_t>(a)].position.y);
    }
    for (auto& src : sources) {
      for (int s = 1; s <= pc.num_scales; ++s) {
        const T inv = static_cast<T>(1.0 / pc.divisor(s));
        src.query_windows.push_back(ad::sample_window(src.query.levels[static_cast<std::size_t>(s - 1)], src.query.shapes[static_cast<std::size_t>(s - 1)],
                                                      query_frames, Var<T>::constant(query_px * inv), radius));
      }
    }
    std::vector<Index> key_frames(static_cast<std::size_t>(nq * frames));
    for (Index a = 0; a < nq; ++a)
      for (Index j = 0; j < frames; ++j) key_frames[static_cast<std::size_t>(a * frames + j)] = j;

    TrackOutput<T> out;
    TrackEstimate<T> est = init_tracks<T>(queries, frames);
    for (int it = 0; it < iterations; ++it) {
      const Var<T> centers = config_.detach_between_iterations ? ad::stop_gradient(est.positions) : est.positions;
      if (hooks.on_resample) hooks.on_resample(it, centers.value());
      std::vector<LocalCostVolume<T>> volumes;
      for (const auto& src : sources) {
        LocalCostVolume<T> vol;
        vol.radius = radius;
        for (int s = 1; s <= pc.num_scales; ++s) {
          const auto si = static_cast<std::size_t>(s - 1);
          const Var<T> scaled = ad::scale(centers, static_cast<T>(1.0 / pc.divisor(s)));
          const Var<T> keys = ad::sample_window(src.key.levels[si], src.key.shapes[si], key_frames, scaled, radius);
          vol.scales.push_back(ad::local_cost(src.query_windows[si], keys, window, frames, src.scale_dim));
        }
        volumes.push_back(std::move(vol));
      }
      LocalCostVolume<T> fused;
      switch (config_.fusion) {
        case FusionMode::kNone:
        case FusionMode::kFeatureConcat:
          fused = volumes[0];
          break;
        case FusionMode::kCostConcat:
          fused = fuse_costs(volumes[0], volumes[1]);
          break;
        case FusionMode::kCostSum:
          fused = volumes[0];
          for (std::size_t s = 0; s < fused.scales.size(); ++s)
            fused.scales[s] = ad::scale(volumes[0].scales[s] + volumes[1].scales[s], T(0.5));
          break;
      }
      const Var<T> emb = embed_(fused);
      const Var<T> tokens = assemble_tokens(est, emb, config_.refiner.fourier_bands);
      const Var<T> delta = refiner_(tokens, nq, frames);
      est = apply_residuals(est, delta, config_.detach_between_iterations);
      out.iterations.push_back(est);
    }
    return out;
  }

 private:
  TrackerConfig config_;
  std::unique_ptr<ParameterSet<T>> params_;
  DiTModel<T> dit_;
  std::optional<ConvBackbone<T>> conv_;
  CostEmbedder<T> embed_;
  Refiner<T> refiner_;
  bool pretrained_dit_ = false;
};

}  // namespace ditracker
