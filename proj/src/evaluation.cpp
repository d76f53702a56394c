#include "ditracker/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "ditracker/matching.hpp"

namespace ditracker {
namespace {

std::string fixed(double v, int digits = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct Accumulator {
  MetricCounts counts;
  long tracks = 0;
  void add(const PredictedTrack& p, const GroundTruthTrack& g, Index excluded) {
    counts.add(p, g, excluded);
    ++tracks;
  }
  MetricSummary summary() const { return MetricSummary::from_counts(counts, tracks); }
};

const std::vector<std::string>& motion_names() {
  static const std::vector<std::string> n{motion_bin_name(MotionBin::kStatic), motion_bin_name(MotionBin::kNormal),
                                          motion_bin_name(MotionBin::kDynamic)};
  return n;
}
const std::vector<std::string>& reappearance_names() {
  static const std::vector<std::string> n{reappearance_bin_name(ReappearanceBin::kLow), reappearance_bin_name(ReappearanceBin::kMedium),
                                          reappearance_bin_name(ReappearanceBin::kHigh)};
  return n;
}

}  // namespace

CorruptionSetting parse_corruption_setting(const std::string& text) {
  const auto colon = text.find(':');
  require(colon != std::string::npos, "corruption setting must look like kind:severity, got " + text);
  CorruptionSetting s;
  s.kind = parse_corruption(text.substr(0, colon));
  try {
    s.severity = std::stoi(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("corruption severity is not an integer: " + text);
  }
  require(s.severity >= 1 && s.severity <= 5, "corruption severity must be in 1..5: " + text);
  return s;
}

MetricSummary MetricSummary::from_counts(const MetricCounts& c, long tracks) {
  MetricSummary m;
  const auto d = c.delta();
  m.delta_avg = d.average;
  m.per_threshold = d.per_threshold;
  m.aj = c.jaccard().average;
  m.oa = c.occlusion();
  m.tracks = tracks;
  return m;
}

nlohmann::json MetricSummary::to_json() const {
  nlohmann::json pt;
  for (std::size_t t = 0; t < kDeltaThresholds.size(); ++t) pt[std::to_string(static_cast<int>(kDeltaThresholds[t]))] = per_threshold[t];
  return {{"aj", aj}, {"delta_avg", delta_avg}, {"per_threshold", pt}, {"oa", oa}, {"tracks", tracks}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["coordinates"] = coordinate_note;
  j["overall"] = overall.to_json();
  for (const auto& [k, v] : motion) j["strata"]["motion"][k] = v.to_json();
  for (const auto& [k, v] : reappearance) j["strata"]["reappearance"][k] = v.to_json();
  j["out_of_range_tracks"] = out_of_range_tracks;
  j["corruption_curves"] = nlohmann::json::array();
  for (const auto& c : corruption_curves) {
    j["corruption_curves"].push_back(
        {{"kind", corruption_name(c.setting.kind)}, {"severity", c.setting.severity}, {"delta_avg", c.metrics.delta_avg}, {"metrics", c.metrics.to_json()}});
  }
  return j;
}

std::string EvalReport::to_markdown() const {
  std::ostringstream md;
  md << "# Evaluation report\n\n" << coordinate_note << "\n\n";
  md << "## Overall\n\n| AJ | delta_avg | OA | tracks |\n|---|---|---|---|\n";
  md << "| " << fixed(overall.aj) << " | " << fixed(overall.delta_avg) << " | " << fixed(overall.oa) << " | " << overall.tracks << " |\n\n";
  md << "| delta@1 | delta@2 | delta@4 | delta@8 | delta@16 |\n|---|---|---|---|---|\n|";
  for (double v : overall.per_threshold) md << " " << fixed(v) << " |";
  md << "\n\n";
  auto table = [&md](const std::string& title, const std::map<std::string, MetricSummary>& bins, const std::vector<std::string>& order) {
    if (bins.empty()) return;
    md << "## " << title << "\n\n| bin | AJ | delta_avg | OA | tracks |\n|---|---|---|---|---|\n";
    for (const auto& name : order) {
      const auto it = bins.find(name);
      if (it == bins.end()) continue;
      const auto& m = it->second;
      md << "| " << name << " | " << fixed(m.aj) << " | " << fixed(m.delta_avg) << " | " << fixed(m.oa) << " | " << m.tracks << " |\n";
    }
    md << "\n";
  };
  table("Motion dynamics", motion, motion_names());
  if (!motion.empty()) md << "Tracks with mean displacement of 5% or more (excluded above): " << out_of_range_tracks << "\n\n";
  table("Reappearance frequency", reappearance, reappearance_names());
  if (!corruption_curves.empty()) {
    md << "## Corruptions\n\n| kind | severity | AJ | delta_avg | OA |\n|---|---|---|---|---|\n";
    for (const auto& c : corruption_curves) {
      md << "| " << corruption_name(c.setting.kind) << " | " << c.setting.severity << " | " << fixed(c.metrics.aj) << " | "
         << fixed(c.metrics.delta_avg) << " | " << fixed(c.metrics.oa) << " |\n";
    }
    md << "\n";
  }
  return md.str();
}

PreparedClip prepare_clip(const SyntheticClip& clip, Index model_h, Index model_w, const std::optional<CorruptionSetting>& corruption,
                          std::uint64_t seed, bool exclude_query_frame) {
  PreparedClip p;
  p.video256 = resize_video(clip.video, kEvalSize, kEvalSize);
  if (corruption) p.video256 = corrupt(p.video256, corruption->kind, corruption->severity, seed);
  p.model_video = resize_video(p.video256, model_h, model_w);
  const double gx = static_cast<double>(kEvalSize) / static_cast<double>(clip.video.width);
  const double gy = static_cast<double>(kEvalSize) / static_cast<double>(clip.video.height);
  p.sx_model = static_cast<double>(model_w) / static_cast<double>(kEvalSize);
  p.sy_model = static_cast<double>(model_h) / static_cast<double>(kEvalSize);
  for (const auto& t : clip.tracks) {
    GroundTruthTrack s = t;
    for (auto& pt : s.positions) pt = {pt.x * gx, pt.y * gy};
    const Index qf = t.first_visible();
    require(qf >= 0, "evaluate: track without a visible frame");
    TrackQuery q;
    q.frame = qf;
    q.position = {std::clamp(s.positions[static_cast<std::size_t>(qf)].x * p.sx_model, 0.0, static_cast<double>(model_w - 1)),
                  std::clamp(s.positions[static_cast<std::size_t>(qf)].y * p.sy_model, 0.0, static_cast<double>(model_h - 1))};
    p.model_queries.push_back(q);
    p.excluded.push_back(exclude_query_frame ? qf : -1);
    p.tracks256.push_back(std::move(s));
  }
  return p;
}

std::vector<PredictedTrack> to_eval_frame(std::vector<PredictedTrack> preds, const PreparedClip& clip) {
  for (auto& p : preds)
    for (auto& pt : p.positions) pt = {pt.x / clip.sx_model, pt.y / clip.sy_model};
  return preds;
}

EvalReport evaluate(const std::vector<SyntheticClip>& clips, const Predictor& predictor, Index model_h, Index model_w, const EvalOptions& options) {
  EvalReport report;
  report.coordinate_note = "Coordinates: native (x, y) scaled by (256/W, 256/H) into the 256x256 frame; thresholds {1,2,4,8,16} px inclusive; "
                           "visibility predicted when p > 0.5; query = first visible frame" +
                           std::string(options.exclude_query_frame ? ", query frame excluded from scoring." : ".");
  Accumulator overall;
  std::map<std::string, Accumulator> motion, reappearance;
  std::vector<Accumulator> corr(options.corruptions.size());
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const auto& clip = clips[ci];
    if (clip.tracks.empty()) continue;
    const double diag = std::hypot(static_cast<double>(clip.video.height), static_cast<double>(clip.video.width));
    const auto prep = prepare_clip(clip, model_h, model_w, std::nullopt, 0, options.exclude_query_frame);
    const auto preds = to_eval_frame(predictor(prep.model_video, prep.model_queries), prep);
    require(preds.size() == prep.tracks256.size(), "evaluate: predictor returned the wrong number of tracks");
    for (std::size_t k = 0; k < preds.size(); ++k) {
      overall.add(preds[k], prep.tracks256[k], prep.excluded[k]);
      if (!options.stratify) continue;
      const auto label = stratify(clip.tracks[k], diag);
      if (label.motion == MotionBin::kOutOfRange) {
        ++report.out_of_range_tracks;
        continue;
      }
      motion[motion_bin_name(label.motion)].add(preds[k], prep.tracks256[k], prep.excluded[k]);
      reappearance[reappearance_bin_name(label.reappearance)].add(preds[k], prep.tracks256[k], prep.excluded[k]);
    }
    for (std::size_t c = 0; c < options.corruptions.size(); ++c) {
      const auto cp = prepare_clip(clip, model_h, model_w, options.corruptions[c], options.seed + ci, options.exclude_query_frame);
      const auto cpreds = to_eval_frame(predictor(cp.model_video, cp.model_queries), cp);
      for (std::size_t k = 0; k < cpreds.size(); ++k) corr[c].add(cpreds[k], cp.tracks256[k], cp.excluded[k]);
    }
  }
  report.overall = overall.summary();
  for (const auto& [k, v] : motion) report.motion[k] = v.summary();
  for (const auto& [k, v] : reappearance) report.reappearance[k] = v.summary();
  for (std::size_t c = 0; c < options.corruptions.size(); ++c) report.corruption_curves.push_back({options.corruptions[c], corr[c].summary()});
  return report;
}

EvalReport evaluate_tracks(const std::vector<PredictedTrack>& preds, const std::vector<GroundTruthTrack>& gts, Index height, Index width,
                           bool exclude_query_frame) {
  require(preds.size() == gts.size(), "evaluate: prediction and ground-truth track counts differ");
  require(height >= 1 && width >= 1, "evaluate: frame size must be positive");
  const double gx = static_cast<double>(kEvalSize) / static_cast<double>(width);
  const double gy = static_cast<double>(kEvalSize) / static_cast<double>(height);
  EvalReport report;
  report.coordinate_note = "Coordinates: (x, y) scaled by (256/W, 256/H) into the 256x256 frame; thresholds {1,2,4,8,16} px inclusive; "
                           "visibility predicted when p > 0.5.";
  Accumulator overall;
  std::map<std::string, Accumulator> motion, reappearance;
  const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
  for (std::size_t k = 0; k < gts.size(); ++k) {
    GroundTruthTrack g = gts[k];
    PredictedTrack p = preds[k];
    for (auto& pt : g.positions) pt = {pt.x * gx, pt.y * gy};
    for (auto& pt : p.positions) pt = {pt.x * gx, pt.y * gy};
    const Index excluded = exclude_query_frame ? gts[k].first_visible() : -1;
    overall.add(p, g, excluded);
    const auto label = stratify(gts[k], diag);
    if (label.motion == MotionBin::kOutOfRange) {
      ++report.out_of_range_tracks;
      continue;
    }
    motion[motion_bin_name(label.motion)].add(p, g, excluded);
    reappearance[reappearance_bin_name(label.reappearance)].add(p, g, excluded);
  }
  report.overall = overall.summary();
  for (const auto& [k, v] : motion) report.motion[k] = v.summary();
  for (const auto& [k, v] : reappearance) report.reappearance[k] = v.summary();
  return report;
}

SweepResult sweep_layers_heads(const DiTModel<float>& model, const std::vector<SyntheticClip>& clips, bool exclude_query_frame) {
  const auto& cfg = model.config();
  std::vector<std::vector<MetricCounts>> counts(static_cast<std::size_t>(cfg.layers), std::vector<MetricCounts>(static_cast<std::size_t>(cfg.heads)));
  ad::NoGradGuard guard;
  for (const auto& clip : clips) {
    if (clip.tracks.empty()) continue;
    const auto prep = prepare_clip(clip, cfg.height, cfg.width, std::nullopt, 0, exclude_query_frame);
    const auto latents = encode_frames<float>(prep.model_video, cfg.patch_stride);
    const auto all = model.extract_all(latents, cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      for (int m = 0; m < cfg.heads; ++m) {
        const Matrix<float> q = all[static_cast<std::size_t>(l)].first.value().middleCols(static_cast<Index>(m) * cfg.d_head, cfg.d_head);
        const Matrix<float> k = all[static_cast<std::size_t>(l)].second.value().middleCols(static_cast<Index>(m) * cfg.d_head, cfg.d_head);
        std::vector<PredictedTrack> preds;
        for (const auto& query : prep.model_queries) {
          PredictedTrack p;
          p.positions = zero_shot_track<float>(q, k, latents.shape, query.frame, query.position, cfg.height, cfg.width);
          preds.push_back(std::move(p));
        }
        preds = to_eval_frame(std::move(preds), prep);
        for (std::size_t t = 0; t < preds.size(); ++t)
          counts[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)].add(preds[t], prep.tracks256[t], prep.excluded[t]);
      }
    }
  }
  SweepResult r;
  double best = -1.0;
  for (int l = 0; l < cfg.layers; ++l) {
    r.delta_avg.emplace_back();
    for (int m = 0; m < cfg.heads; ++m) {
      const double d = counts[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)].delta().average;
      r.delta_avg.back().push_back(d);
      if (d > best) {
        best = d;
        r.best_layer = l + 1;
        r.best_head = m;
      }
    }
  }
  return r;
}

double zero_shot_delta(const DiTModel<float>& model, const std::vector<SyntheticClip>& clips, int layer, int head, bool exclude_query_frame) {
  const auto& cfg = model.config();
  MetricCounts counts;
  ad::NoGradGuard guard;
  for (const auto& clip : clips) {
    if (clip.tracks.empty()) continue;
    const auto prep = prepare_clip(clip, cfg.height, cfg.width, std::nullopt, 0, exclude_query_frame);
    const auto qk = model.extract_qk(encode_frames<float>(prep.model_video, cfg.patch_stride), layer, head);
    std::vector<PredictedTrack> preds;
    for (const auto& query : prep.model_queries) {
      PredictedTrack p;
      p.positions = zero_shot_track(qk, query.frame, query.position, cfg.height, cfg.width);
      preds.push_back(std::move(p));
    }
    preds = to_eval_frame(std::move(preds), prep);
    for (std::size_t t = 0; t < preds.size(); ++t) counts.add(preds[t], prep.tracks256[t], prep.excluded[t]);
  }
  return counts.delta().average;
}

}  // namespace ditracker
