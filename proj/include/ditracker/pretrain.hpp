#pragma once

// Flow-matching pretraining of the toy DiT on synthetic clips.

#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/datagen.hpp"
#include "ditracker/dit.hpp"

namespace ditracker {

struct PretrainSchedule {
  long steps = 2000;
  double lr = 3e-4;
  long warmup = 50;
  double clip_norm = 1.0;
  Index max_frames = 8;  // frames per training window
  int heldout_batches = 8;
  double independent_noise = 0.0;  // probability that a step draws a separate noise time per frame

  nlohmann::json to_json() const;
  static PretrainSchedule from_json(const nlohmann::json& j);
};

struct PretrainResult {
  std::vector<double> loss_curve;
  double heldout_loss_initial = 0.0;
  double heldout_loss_final = 0.0;
  double final_train_loss = 0.0;  // mean of the last 10% of steps
};

/// z_t = (1 - t) z0 + t eps.
template <typename T>
Matrix<T> interpolate_noise(const Matrix<T>& z0, const Matrix<T>& eps, double t) {
  return static_cast<T>(1.0 - t) * z0 + static_cast<T>(t) * eps;
}

/// Mean squared error between the predicted velocity and eps - z0 at time t.
template <typename T>
Var<T> flow_matching_loss(const DiTModel<T>& model, const LatentVideo<T>& z0, const Matrix<T>& eps, double t) {
  LatentVideo<T> zt{z0.shape, interpolate_noise<T>(z0.latents, eps, t)};
  const Var<T> v = model.velocity(zt, t);
  return ad::square_mean(v - Var<T>::constant(eps - z0.latents));
}

/// Same loss with a separate time per frame.
template <typename T>
Var<T> flow_matching_loss(const DiTModel<T>& model, const LatentVideo<T>& z0, const Matrix<T>& eps, const std::vector<double>& frame_t) {
  require(static_cast<Index>(frame_t.size()) == z0.shape.frames, "flow_matching_loss: need one time per frame");
  LatentVideo<T> zt{z0.shape, Matrix<T>(z0.latents.rows(), z0.latents.cols())};
  const Index cells = z0.shape.cells();
  for (Index f = 0; f < z0.shape.frames; ++f)
    zt.latents.middleRows(f * cells, cells) =
        interpolate_noise<T>(z0.latents.middleRows(f * cells, cells), eps.middleRows(f * cells, cells), frame_t[static_cast<std::size_t>(f)]);
  const Var<T> v = model.velocity(zt, frame_t);
  return ad::square_mean(v - Var<T>::constant(eps - z0.latents));
}

/// Trains every parameter in `params` (the model's set) on the corpus; `heldout` clips give the
/// before/after loss on fixed (t, eps) draws.
PretrainResult pretrain_flow_matching(DiTModel<float>& model, ParameterSet<float>& params, const std::vector<SyntheticClip>& corpus,
                                      const std::vector<SyntheticClip>& heldout, const PretrainSchedule& schedule, std::uint64_t seed,
                                      const std::function<void(long, double)>& on_step = {});

/// Mean flow-matching loss over fixed draws seeded by `seed`.
double heldout_flow_loss(const DiTModel<float>& model, const std::vector<SyntheticClip>& clips, Index max_frames, int batches,
                         std::uint64_t seed);

}  // namespace ditracker
