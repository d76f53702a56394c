#include "ditracker/training.hpp"

#include <map>

namespace ditracker {

nlohmann::json TrainSchedule::to_json() const {
  return {{"steps", steps},
          {"lr", lr},
          {"warmup", warmup},
          {"clip_norm", clip_norm},
          {"queries_per_clip", queries_per_clip},
          {"probe_clips", probe_clips},
          {"checkpoint_every", checkpoint_every}};
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j) {
  TrainSchedule s;
  s.steps = j.value("steps", s.steps);
  s.lr = j.value("lr", s.lr);
  s.warmup = j.value("warmup", s.warmup);
  s.clip_norm = j.value("clip_norm", s.clip_norm);
  s.queries_per_clip = j.value("queries_per_clip", s.queries_per_clip);
  s.probe_clips = j.value("probe_clips", s.probe_clips);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
  require(s.steps >= 0 && s.lr >= 0 && s.queries_per_clip >= 1 && s.probe_clips >= 1 && s.checkpoint_every >= 0,
          "TrainSchedule: invalid values");
  return s;
}

std::vector<std::pair<std::size_t, TrackQuery>> sample_queries(const SyntheticClip& clip, int count, std::mt19937_64& rng) {
  require(!clip.tracks.empty(), "sample_queries: clip has no tracks");
  std::vector<std::pair<std::size_t, TrackQuery>> out;
  std::uniform_int_distribution<std::size_t> pick(0, clip.tracks.size() - 1);
  for (int i = 0; i < count; ++i) {
    const std::size_t k = pick(rng);
    const auto& t = clip.tracks[k];
    std::vector<double> w(t.visible.size(), 0.0);
    for (std::size_t f = 0; f < w.size(); ++f)
      if (t.visible[f]) w[f] = static_cast<double>(w.size() - f);
    const auto f = static_cast<Index>(std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng));
    TrackQuery q;
    q.frame = f;
    // Visible points lie inside the frame after rounding; clamp the sub-pixel remainder.
    q.position = {std::clamp(t.positions[static_cast<std::size_t>(f)].x, 0.0, static_cast<double>(clip.video.width - 1)),
                  std::clamp(t.positions[static_cast<std::size_t>(f)].y, 0.0, static_cast<double>(clip.video.height - 1))};
    out.emplace_back(k, q);
  }
  return out;
}

TrackTargets<float> make_targets(const SyntheticClip& clip, const std::vector<std::pair<std::size_t, TrackQuery>>& queries) {
  const Index frames = clip.video.frames;
  const Index n = static_cast<Index>(queries.size()) * frames;
  TrackTargets<float> t{Matrix<float>(n, 2), Vector<float>(n)};
  for (std::size_t a = 0; a < queries.size(); ++a) {
    const auto& gt = clip.tracks[queries[a].first];
    for (Index j = 0; j < frames; ++j) {
      const Index r = static_cast<Index>(a) * frames + j;
      t.positions(r, 0) = static_cast<float>(gt.positions[static_cast<std::size_t>(j)].x);
      t.positions(r, 1) = static_cast<float>(gt.positions[static_cast<std::size_t>(j)].y);
      t.visible(r) = gt.visible[static_cast<std::size_t>(j)] ? 1.0f : 0.0f;
    }
  }
  return t;
}

namespace {

std::vector<TrackQuery> just_queries(const std::vector<std::pair<std::size_t, TrackQuery>>& q) {
  std::vector<TrackQuery> out;
  for (const auto& p : q) out.push_back(p.second);
  return out;
}

}  // namespace

double probe_loss(const TrackerModel<float>& model, const std::vector<SyntheticClip>& clips, int queries_per_clip, std::uint64_t seed,
                  const LossConfig& loss) {
  require(!clips.empty(), "probe_loss: no clips");
  ad::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (const auto& clip : clips) {
    const auto q = sample_queries(clip, queries_per_clip, rng);
    const auto out = model.track(clip.video, just_queries(q), model.config().iterations);
    total += total_loss(out.iterations, make_targets(clip, q), loss).item();
  }
  return total / static_cast<double>(clips.size());
}

TrainResult train_tracker(TrackerModel<float>& model, const std::vector<SyntheticClip>& corpus, const TrainSchedule& schedule,
                          std::uint64_t seed, const LossConfig& loss, const TrainCallbacks& callbacks) {
  if (!model.has_pretrained_dit()) throw PreconditionError("train: the tracker needs a pretrained DiT checkpoint");
  require(!corpus.empty(), "train: empty corpus");
  std::vector<SyntheticClip> usable;
  for (const auto& c : corpus)
    if (!c.tracks.empty()) usable.push_back(c);
  require(!usable.empty(), "train: no clip carries tracks");
  const std::vector<SyntheticClip> probe(usable.begin(), usable.begin() + std::min<std::ptrdiff_t>(schedule.probe_clips, static_cast<std::ptrdiff_t>(usable.size())));

  TrainResult result;
  const std::uint64_t probe_seed = seed ^ 0x9e3779b97f4a7c15ULL;
  result.probe_loss_initial = probe_loss(model, probe, schedule.queries_per_clip, probe_seed, loss);

  // Frozen-DiT arms reuse the clip's query/key maps across steps.
  const bool dit_frozen = !model.dit().has_lora();
  std::map<std::size_t, QKFeatures<float>> qk_cache;

  Adam<float> adam(AdamConfig{schedule.lr, 0.9, 0.999, 1e-8, schedule.clip_norm});
  std::mt19937_64 rng(seed);
  for (long step = 0; step < schedule.steps; ++step) {
    const std::size_t ci = std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng);
    const auto& clip = usable[ci];
    const auto q = sample_queries(clip, schedule.queries_per_clip, rng);
    model.params().zero_grad();
    BackboneFeatures<float> feats;
    if (dit_frozen) {
      auto it = qk_cache.find(ci);
      if (it == qk_cache.end()) {
        ad::NoGradGuard guard;
        it = qk_cache.emplace(ci, model.features(clip.video).qk).first;
      }
      feats = model.conv_features(clip.video);
      feats.qk = it->second;
    } else {
      feats = model.features(clip.video);
    }
    const auto out = model.track(feats, just_queries(q), model.config().iterations);
    const Var<float> l = total_loss(out.iterations, make_targets(clip, q), loss);
    ad::backward(l);
    const double lr = cosine_lr(schedule.lr, step, schedule.steps, schedule.warmup);
    adam.step(model.params(), lr);
    result.loss_curve.push_back(l.item());
    if (callbacks.on_step) callbacks.on_step(step, l.item(), lr);
    if (callbacks.on_checkpoint && schedule.checkpoint_every > 0 && (step + 1) % schedule.checkpoint_every == 0) callbacks.on_checkpoint(step + 1);
  }
  result.probe_loss_final = probe_loss(model, probe, schedule.queries_per_clip, probe_seed, loss);
  return result;
}

}  // namespace ditracker
