#include "ditracker/pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace ditracker {

std::uint64_t train_clip_seed(std::uint64_t run_seed, int index) { return run_seed * 1000000ULL + 1000ULL + static_cast<std::uint64_t>(index); }
std::uint64_t eval_clip_seed(std::uint64_t run_seed, int index) { return run_seed * 1000000ULL + 900000ULL + static_cast<std::uint64_t>(index); }

std::vector<SyntheticClip> synthetic_corpus(const GeneratorConfig& config, int count, const std::function<std::uint64_t(int)>& seed_of) {
  require(count >= 0, "synthetic_corpus: negative count");
  std::vector<SyntheticClip> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_clip(config, seed_of(i)));
  return out;
}

DiTConfig dit_config_for(const GeneratorConfig& gen) {
  DiTConfig c;
  c.height = gen.height;
  c.width = gen.width;
  c.max_frames = std::max<Index>(c.max_frames, gen.frames + 1);
  return c;
}

DiTBundle make_dit(const DiTConfig& config, std::uint64_t seed) {
  DiTBundle b;
  b.params = std::make_unique<ParameterSet<float>>();
  b.model = std::make_unique<DiTModel<float>>(*b.params, config, seed, "dit");
  b.manifest = {{"kind", "dit"}, {"config", config.to_json()}, {"seed", seed}, {"steps", 0}};
  return b;
}

void save_dit(const fs::path& dir, const DiTBundle& dit, const nlohmann::json& extra) {
  nlohmann::json m = dit.manifest;
  if (extra.is_object()) m.update(extra);
  m["kind"] = "dit";
  m["config"] = dit.model->config().to_json();
  m["lora_layers"] = nlohmann::json::array();
  m["params_hash"] = parameter_hash(*dit.params, "dit.");
  save_checkpoint(dir, *dit.params, m);
}

DiTBundle load_dit(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw PreconditionError("no DiT checkpoint at " + dir.string());
  const Checkpoint ck = load_checkpoint(dir);
  if (ck.manifest.value("kind", std::string()) != "dit") throw PreconditionError(dir.string() + " does not hold a DiT checkpoint");
  DiTBundle b = make_dit(DiTConfig::from_json(ck.manifest.at("config")), ck.manifest.value("seed", std::uint64_t{0}));
  load_parameters(*b.params, ck, "dit.");
  b.manifest = ck.manifest;
  b.manifest["params_hash"] = parameter_hash(*b.params, "dit.");
  return b;
}

void save_tracker(const fs::path& dir, const TrackerModel<float>& model, const nlohmann::json& extra) {
  nlohmann::json m = extra;
  m["kind"] = "tracker";
  m["config"] = model.config().to_json();
  nlohmann::json lora = nlohmann::json::array();
  for (int l = 1; l <= model.dit().lora_layers(); ++l) lora.push_back(l);
  m["lora_layers"] = lora;
  m["pretrained_dit"] = model.has_pretrained_dit();
  save_checkpoint(dir, model.params(), m);
}

std::unique_ptr<TrackerModel<float>> load_tracker(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw PreconditionError("no tracker checkpoint at " + dir.string());
  const Checkpoint ck = load_checkpoint(dir);
  if (ck.manifest.value("kind", std::string()) != "tracker") throw PreconditionError(dir.string() + " does not hold a tracker checkpoint");
  const TrackerConfig cfg = TrackerConfig::from_json(ck.manifest.at("config"));
  const auto seed = ck.manifest.value("seed", std::uint64_t{0});
  auto model = std::make_unique<TrackerModel<float>>(cfg, seed);
  if (!ck.manifest.value("lora_layers", nlohmann::json::array()).empty()) model->prepare_adapters(seed);
  load_parameters(model->params(), ck);
  model->mark_pretrained_dit(ck.manifest.value("pretrained_dit", false));
  return model;
}

std::vector<PredictedTrack> run_tracker(const TrackerModel<float>& model, const Video& video, const std::vector<TrackQuery>& queries) {
  ad::NoGradGuard guard;
  const auto out = model.track(video, queries, model.config().iterations);
  const auto& est = out.final();
  const Matrix<float>& p = est.positions.value();
  const Matrix<float>& v = est.vis_logits.value();
  const Matrix<float>& c = est.conf_logits.value();
  std::vector<PredictedTrack> preds(queries.size());
  for (Index a = 0; a < est.queries; ++a) {
    auto& t = preds[static_cast<std::size_t>(a)];
    for (Index j = 0; j < est.frames; ++j) {
      const Index r = a * est.frames + j;
      t.positions.push_back({static_cast<double>(p(r, 0)), static_cast<double>(p(r, 1))});
      t.visibility.push_back(sigmoid(static_cast<double>(v(r, 0))));
      t.confidence.push_back(sigmoid(static_cast<double>(c(r, 0))));
    }
  }
  return preds;
}

Predictor tracker_predictor(const TrackerModel<float>& model) {
  return [&model](const Video& video, const std::vector<TrackQuery>& queries) { return run_tracker(model, video, queries); };
}

std::string ArmSpec::key() const { return std::string(use_lora ? "lora" : "frozen") + "-" + fusion_name(fusion); }

std::vector<TableRow> lora_fusion_rows() {
  return {{"I", {false, FusionMode::kNone}},
          {"II", {false, FusionMode::kCostConcat}},
          {"III", {true, FusionMode::kNone}},
          {"IV", {true, FusionMode::kCostConcat}}};
}

std::vector<TableRow> fusion_rows() {
  return {{"I", {true, FusionMode::kNone}},
          {"II", {true, FusionMode::kFeatureConcat}},
          {"III", {true, FusionMode::kCostSum}},
          {"IV", {true, FusionMode::kCostConcat}}};
}

ArmOutcome train_or_load_arm(const fs::path& dir, const ArmSpec& arm, const ArmTraining& training, const DiTBundle& dit,
                             const std::vector<SyntheticClip>& corpus, const std::function<void(const std::string&)>& log) {
  TrackerConfig cfg = training.base;
  cfg.use_lora = arm.use_lora;
  cfg.fusion = arm.fusion;
  const int layer = cfg.dit.extract_layer, head = cfg.dit.extract_head;
  cfg.dit = dit.model->config();
  cfg.dit.extract_layer = layer;
  cfg.dit.extract_head = head;
  cfg.validate();
  const nlohmann::json identity = {{"config", cfg.to_json()},
                                   {"schedule", training.schedule.to_json()},
                                   {"loss", training.loss.to_json()},
                                   {"seed", training.seed},
                                   {"corpus_hash", corpus_hash(corpus)},
                                   {"dit_hash", parameter_hash(*dit.params, "dit.")}};

  ArmOutcome outcome;
  if (fs::exists(dir / "manifest.json")) {
    const nlohmann::json m = read_json(dir / "manifest.json");
    if (m.value("identity", nlohmann::json()) == identity) {
      outcome.model = load_tracker(dir);
      outcome.probe_initial = m.value("probe_loss_initial", 0.0);
      outcome.probe_final = m.value("probe_loss_final", 0.0);
      outcome.cached = true;
      if (log) log(arm.key() + ": loaded cached checkpoint " + dir.string());
      return outcome;
    }
  }

  outcome.model = std::make_unique<TrackerModel<float>>(cfg, training.seed);
  outcome.model->load_pretrained_dit(*dit.params);
  outcome.model->prepare_adapters(training.seed + 17);
  TrainCallbacks cb;
  if (log) {
    cb.on_step = [&](long step, double loss, double lr) {
      if (step % 100 == 0 || step + 1 == training.schedule.steps) {
        std::ostringstream s;
        s << arm.key() << " step " << step << " loss " << loss << " lr " << lr;
        log(s.str());
      }
    };
  }
  if (training.schedule.checkpoint_every > 0) {
    cb.on_checkpoint = [&](long step) {
      char name[32];
      std::snprintf(name, sizeof(name), "_step%06ld", step);
      save_tracker(dir.parent_path() / (dir.filename().string() + name), *outcome.model,
                   {{"seed", training.seed}, {"steps", step}, {"corpus_hash", identity["corpus_hash"]}});
    };
  }
  const TrainResult r = train_tracker(*outcome.model, corpus, training.schedule, training.seed, training.loss, cb);
  outcome.probe_initial = r.probe_loss_initial;
  outcome.probe_final = r.probe_loss_final;
  save_tracker(dir, *outcome.model,
               {{"identity", identity},
                {"seed", training.seed},
                {"steps", training.schedule.steps},
                {"corpus_hash", identity["corpus_hash"]},
                {"probe_loss_initial", r.probe_loss_initial},
                {"probe_loss_final", r.probe_loss_final}});
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) csv << i << ',' << r.loss_curve[i] << '\n';
  write_text(dir / "loss.csv", csv.str());
  return outcome;
}

std::string AblationResult::table(const std::vector<TableRow>& rows, const std::string& title) const {
  std::ostringstream s;
  char buf[160];
  s << "### " << title << "\n\n| Arm | DiT LoRA | Fusion | AJ | delta_avg | OA |\n|---|---|---|---|---|---|\n";
  for (const auto& row : rows) {
    const auto it = arms.find(row.arm.key());
    if (it == arms.end()) continue;
    std::snprintf(buf, sizeof(buf), "| %s | %s | %s | %.1f | %.1f | %.1f |\n", row.label.c_str(), row.arm.use_lora ? "yes" : "no",
                  fusion_name(row.arm.fusion).c_str(), it->second.aj, it->second.delta_avg, it->second.oa);
    s << buf;
  }
  return s.str();
}

std::string AblationResult::csv(const std::vector<TableRow>& rows) const {
  std::ostringstream s;
  char buf[160];
  s << "arm,lora,fusion,aj,delta_avg,oa\n";
  for (const auto& row : rows) {
    const auto it = arms.find(row.arm.key());
    if (it == arms.end()) continue;
    std::snprintf(buf, sizeof(buf), "%s,%d,%s,%.6f,%.6f,%.6f\n", row.label.c_str(), row.arm.use_lora ? 1 : 0, fusion_name(row.arm.fusion).c_str(),
                  it->second.aj, it->second.delta_avg, it->second.oa);
    s << buf;
  }
  return s.str();
}

}  // namespace ditracker
