#pragma once

// Point-tracking metrics: position accuracy under thresholds, occlusion accuracy, average Jaccard.

#include <array>
#include <vector>

#include "ditracker/datagen.hpp"

namespace ditracker {

inline constexpr std::array<double, 5> kDeltaThresholds{1.0, 2.0, 4.0, 8.0, 16.0};

struct PredictedTrack {
  std::vector<Point2D> positions;
  std::vector<double> visibility;  // probabilities
  std::vector<double> confidence;
};

struct ThresholdScores {
  std::array<double, 5> per_threshold{};
  double average = 0.0;
};

/// Frames excluded from scoring, one entry per track (-1 keeps every frame). Empty means none.
using ExcludedFrames = std::vector<Index>;

/// Percentage of GT-visible frames whose prediction lies within each threshold (inclusive).
ThresholdScores delta_avg(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts,
                          const ExcludedFrames& excluded = {});

/// Percentage of frames where (visibility > threshold) equals the GT flag.
double occlusion_accuracy(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts,
                          const ExcludedFrames& excluded = {}, double vis_threshold = 0.5);

/// Threshold-averaged TP / (TP + FP + FN) in percent.
ThresholdScores average_jaccard(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts,
                                const ExcludedFrames& excluded = {}, double vis_threshold = 0.5);

/// Raw counts behind the three metrics, so partial sets can be pooled before dividing.
struct MetricCounts {
  std::array<long, 5> within{};      // GT-visible frames within threshold
  long visible = 0;                  // GT-visible frames
  long occlusion_correct = 0;
  long frames = 0;
  std::array<long, 5> tp{}, fp{}, fn{};

  void add(const PredictedTrack& pred, const GroundTruthTrack& gt, Index excluded_frame = -1, double vis_threshold = 0.5);
  MetricCounts& operator+=(const MetricCounts& other);
  ThresholdScores delta() const;
  double occlusion() const;
  ThresholdScores jaccard() const;
};

}  // namespace ditracker
