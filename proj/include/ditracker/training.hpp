#pragma once

// Tracker training loop over synthetic clips.

#include <functional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/datagen.hpp"
#include "ditracker/losses.hpp"
#include "ditracker/tracker.hpp"

namespace ditracker {

struct TrainSchedule {
  long steps = 2000;
  double lr = 3e-4;
  long warmup = 50;
  double clip_norm = 1.0;
  int queries_per_clip = 16;
  int probe_clips = 4;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints

  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j);
};

struct TrainResult {
  std::vector<double> loss_curve;
  double probe_loss_initial = 0.0;
  double probe_loss_final = 0.0;
};

/// Draws `count` (track, frame) queries; tracks uniformly with replacement, query frames among the
/// track's visible frames with weight proportional to (F - frame).
std::vector<std::pair<std::size_t, TrackQuery>> sample_queries(const SyntheticClip& clip, int count, std::mt19937_64& rng);

/// Ground truth in the tracker's row order (query-major, then frame).
TrackTargets<float> make_targets(const SyntheticClip& clip, const std::vector<std::pair<std::size_t, TrackQuery>>& queries);

struct TrainCallbacks {
  std::function<void(long step, double loss, double lr)> on_step;
  std::function<void(long step)> on_checkpoint;
};

/// Optimizes the unit-weighted total loss. Throws PreconditionError unless the model's DiT holds
/// pretrained weights.
TrainResult train_tracker(TrackerModel<float>& model, const std::vector<SyntheticClip>& corpus, const TrainSchedule& schedule,
                          std::uint64_t seed, const LossConfig& loss = {}, const TrainCallbacks& callbacks = {});

/// Total loss on a fixed set of (clip, query) draws, without gradients.
double probe_loss(const TrackerModel<float>& model, const std::vector<SyntheticClip>& clips, int queries_per_clip, std::uint64_t seed,
                  const LossConfig& loss = {});

}  // namespace ditracker
