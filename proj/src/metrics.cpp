#include "ditracker/metrics.hpp"

#include <cmath>

namespace ditracker {
namespace {

double percent(long num, long den) { return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den); }

MetricCounts count_all(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts,
                       const ExcludedFrames& excluded, double vis_threshold) {
  require(preds.size() == gts.size(), "metrics: prediction and ground-truth track counts differ");
  require(excluded.empty() || excluded.size() == gts.size(), "metrics: one excluded frame per track");
  MetricCounts c;
  for (std::size_t i = 0; i < gts.size(); ++i) c.add(preds[i], gts[i], excluded.empty() ? -1 : excluded[i], vis_threshold);
  return c;
}

}  // namespace

void MetricCounts::add(const PredictedTrack& pred, const GroundTruthTrack& gt, Index excluded_frame, double vis_threshold) {
  const std::size_t f = gt.positions.size();
  require(gt.visible.size() == f, "metrics: ground-truth visibility length mismatch");
  require(pred.positions.size() == f, "metrics: predicted track length mismatch");
  require(pred.visibility.empty() || pred.visibility.size() == f, "metrics: predicted visibility length mismatch");
  for (std::size_t j = 0; j < f; ++j) {
    if (static_cast<Index>(j) == excluded_frame) continue;
    const bool gt_vis = gt.visible[j];
    const bool pred_vis = pred.visibility.empty() || pred.visibility[j] > vis_threshold;
    const double err = std::hypot(pred.positions[j].x - gt.positions[j].x, pred.positions[j].y - gt.positions[j].y);
    ++frames;
    if (pred_vis == gt_vis) ++occlusion_correct;
    if (gt_vis) ++visible;
    for (std::size_t t = 0; t < kDeltaThresholds.size(); ++t) {
      const bool close = err <= kDeltaThresholds[t];
      if (gt_vis && close) ++within[t];
      if (gt_vis && pred_vis && close) {
        ++tp[t];
      } else {
        if (gt_vis) ++fn[t];
        if (pred_vis) ++fp[t];
      }
    }
  }
}

MetricCounts& MetricCounts::operator+=(const MetricCounts& o) {
  for (std::size_t t = 0; t < 5; ++t) {
    within[t] += o.within[t];
    tp[t] += o.tp[t];
    fp[t] += o.fp[t];
    fn[t] += o.fn[t];
  }
  visible += o.visible;
  occlusion_correct += o.occlusion_correct;
  frames += o.frames;
  return *this;
}

ThresholdScores MetricCounts::delta() const {
  ThresholdScores s;
  for (std::size_t t = 0; t < 5; ++t) s.per_threshold[t] = percent(within[t], visible);
  s.average = (s.per_threshold[0] + s.per_threshold[1] + s.per_threshold[2] + s.per_threshold[3] + s.per_threshold[4]) / 5.0;
  return s;
}

double MetricCounts::occlusion() const { return percent(occlusion_correct, frames); }

ThresholdScores MetricCounts::jaccard() const {
  ThresholdScores s;
  for (std::size_t t = 0; t < 5; ++t) s.per_threshold[t] = percent(tp[t], tp[t] + fp[t] + fn[t]);
  s.average = (s.per_threshold[0] + s.per_threshold[1] + s.per_threshold[2] + s.per_threshold[3] + s.per_threshold[4]) / 5.0;
  return s;
}

ThresholdScores delta_avg(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts, const ExcludedFrames& excluded) {
  return count_all(preds, gts, excluded, 0.5).delta();
}

double occlusion_accuracy(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts, const ExcludedFrames& excluded,
                          double vis_threshold) {
  return count_all(preds, gts, excluded, vis_threshold).occlusion();
}

ThresholdScores average_jaccard(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts,
                                const ExcludedFrames& excluded, double vis_threshold) {
  return count_all(preds, gts, excluded, vis_threshold).jaccard();
}

}  // namespace ditracker
