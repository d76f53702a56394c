#pragma once

// Evaluation protocol: 256 x 256 resize, first-visible queries, strata, corruption grids, zero-shot sweeps.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/datagen.hpp"
#include "ditracker/dit.hpp"
#include "ditracker/metrics.hpp"
#include "ditracker/refiner.hpp"

namespace ditracker {

inline constexpr Index kEvalSize = 256;

struct CorruptionSetting {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 1;
};

/// "kind:severity", e.g. "motion_blur:3".
CorruptionSetting parse_corruption_setting(const std::string& text);

struct EvalOptions {
  bool stratify = true;
  bool exclude_query_frame = true;
  std::vector<CorruptionSetting> corruptions;
  std::uint64_t seed = 0;  // corruption noise streams
};

struct MetricSummary {
  double aj = 0.0;
  double delta_avg = 0.0;
  std::array<double, 5> per_threshold{};
  double oa = 0.0;
  long tracks = 0;

  static MetricSummary from_counts(const MetricCounts& c, long tracks);
  nlohmann::json to_json() const;
};

struct CorruptionPoint {
  CorruptionSetting setting;
  MetricSummary metrics;
};

struct EvalReport {
  MetricSummary overall;
  std::map<std::string, MetricSummary> motion;        // bin name -> metrics
  std::map<std::string, MetricSummary> reappearance;  // bin name -> metrics
  long out_of_range_tracks = 0;
  std::vector<CorruptionPoint> corruption_curves;
  std::string coordinate_note;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

/// Model-side tracker: receives the model-resolution video and queries in model pixels and returns
/// per-query predictions in model pixels.
using Predictor = std::function<std::vector<PredictedTrack>(const Video& video, const std::vector<TrackQuery>& queries)>;

/// Clip prepared for evaluation: 256 x 256 video, model-resolution video, GT scaled to 256, queries.
struct PreparedClip {
  Video video256;
  Video model_video;
  std::vector<GroundTruthTrack> tracks256;
  std::vector<TrackQuery> model_queries;
  ExcludedFrames excluded;
  double sx_model = 1.0;  // model pixels per 256-frame pixel
  double sy_model = 1.0;
};

PreparedClip prepare_clip(const SyntheticClip& clip, Index model_h, Index model_w, const std::optional<CorruptionSetting>& corruption,
                          std::uint64_t seed, bool exclude_query_frame);

/// Maps model-pixel predictions into the 256 frame.
std::vector<PredictedTrack> to_eval_frame(std::vector<PredictedTrack> preds, const PreparedClip& clip);

EvalReport evaluate(const std::vector<SyntheticClip>& clips, const Predictor& predictor, Index model_h, Index model_w, const EvalOptions& options);

/// Metrics for prediction/ground-truth files already in a common frame of width x height.
EvalReport evaluate_tracks(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts, Index height, Index width,
                           bool exclude_query_frame);

/// Zero-shot argmax-tracking accuracy of every (layer, head) pair, delta_avg in the 256 frame.
struct SweepResult {
  std::vector<std::vector<double>> delta_avg;  // [layer - 1][head]
  int best_layer = 1;                          // 1-based
  int best_head = 0;
};

SweepResult sweep_layers_heads(const DiTModel<float>& model, const std::vector<SyntheticClip>& clips, bool exclude_query_frame = true);

/// Zero-shot delta_avg of a single (layer, head) cell.
double zero_shot_delta(const DiTModel<float>& model, const std::vector<SyntheticClip>& clips, int layer, int head, bool exclude_query_frame = true);

}  // namespace ditracker
