#include "ditracker/pretrain.hpp"

#include <numeric>
#include <random>

namespace ditracker {
namespace {

struct Draw {
  std::size_t clip = 0;
  Index first = 0;
  double t = 0.0;
};

Draw draw(std::mt19937_64& rng, std::size_t clips, Index frames, Index window) {
  Draw d;
  d.clip = std::uniform_int_distribution<std::size_t>(0, clips - 1)(rng);
  d.first = frames > window ? std::uniform_int_distribution<Index>(0, frames - window)(rng) : 0;
  d.t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return d;
}

LatentVideo<float> window_latents(const SyntheticClip& clip, Index first, Index window, int stride) {
  std::vector<Index> order;
  for (Index f = first; f < std::min(clip.video.frames, first + window); ++f) order.push_back(f);
  return encode_frames<float>(clip.video.select(order), stride);
}

Matrix<float> normal_like(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Matrix<float> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

nlohmann::json PretrainSchedule::to_json() const {
  return {{"steps", steps}, {"lr", lr}, {"warmup", warmup}, {"clip_norm", clip_norm}, {"max_frames", max_frames}, {"heldout_batches", heldout_batches}, {"independent_noise", independent_noise}};
}

PretrainSchedule PretrainSchedule::from_json(const nlohmann::json& j) {
  PretrainSchedule s;
  s.steps = j.value("steps", s.steps);
  s.lr = j.value("lr", s.lr);
  s.warmup = j.value("warmup", s.warmup);
  s.clip_norm = j.value("clip_norm", s.clip_norm);
  s.max_frames = j.value("max_frames", s.max_frames);
  s.heldout_batches = j.value("heldout_batches", s.heldout_batches);
  s.independent_noise = j.value("independent_noise", s.independent_noise);
  require(s.steps >= 0 && s.lr >= 0 && s.max_frames >= 1 && s.heldout_batches >= 1 && s.independent_noise >= 0 && s.independent_noise <= 1,
          "PretrainSchedule: invalid values");
  return s;
}

double heldout_flow_loss(const DiTModel<float>& model, const std::vector<SyntheticClip>& clips, Index max_frames, int batches,
                         std::uint64_t seed) {
  require(!clips.empty(), "heldout_flow_loss: no clips");
  ad::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int b = 0; b < batches; ++b) {
    const auto& clip = clips[static_cast<std::size_t>(b) % clips.size()];
    const Draw d = draw(rng, 1, clip.video.frames, max_frames);
    const auto z0 = window_latents(clip, d.first, max_frames, model.config().patch_stride);
    const Matrix<float> eps = normal_like(z0.latents.rows(), z0.latents.cols(), rng);
    total += flow_matching_loss(model, z0, eps, d.t).item();
  }
  return total / batches;
}

PretrainResult pretrain_flow_matching(DiTModel<float>& model, ParameterSet<float>& params, const std::vector<SyntheticClip>& corpus,
                                      const std::vector<SyntheticClip>& heldout, const PretrainSchedule& schedule, std::uint64_t seed,
                                      const std::function<void(long, double)>& on_step) {
  require(!corpus.empty(), "pretrain_flow_matching: empty corpus");
  const auto& eval = heldout.empty() ? corpus : heldout;
  PretrainResult result;
  result.heldout_loss_initial = heldout_flow_loss(model, eval, schedule.max_frames, schedule.heldout_batches, seed ^ 0x5eedULL);

  Adam<float> adam(AdamConfig{schedule.lr, 0.9, 0.999, 1e-8, schedule.clip_norm});
  std::mt19937_64 rng(seed);
  for (long step = 0; step < schedule.steps; ++step) {
    const auto& clip = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
    const Draw d = draw(rng, 1, clip.video.frames, schedule.max_frames);
    const auto z0 = window_latents(clip, d.first, schedule.max_frames, model.config().patch_stride);
    const Matrix<float> eps = normal_like(z0.latents.rows(), z0.latents.cols(), rng);
    params.zero_grad();
    Var<float> loss;
    if (schedule.independent_noise > 0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < schedule.independent_noise) {
      std::vector<double> ts(static_cast<std::size_t>(z0.shape.frames));
      for (auto& t : ts) t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      loss = flow_matching_loss(model, z0, eps, ts);
    } else {
      loss = flow_matching_loss(model, z0, eps, d.t);
    }
    ad::backward(loss);
    adam.step(params, cosine_lr(schedule.lr, step, schedule.steps, schedule.warmup));
    result.loss_curve.push_back(loss.item());
    if (on_step) on_step(step, loss.item());
  }
  if (!result.loss_curve.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, result.loss_curve.size() / 10);
    result.final_train_loss =
        std::accumulate(result.loss_curve.end() - static_cast<std::ptrdiff_t>(tail), result.loss_curve.end(), 0.0) / static_cast<double>(tail);
  }
  result.heldout_loss_final = heldout_flow_loss(model, eval, schedule.max_frames, schedule.heldout_batches, seed ^ 0x5eedULL);
  return result;
}

}  // namespace ditracker
