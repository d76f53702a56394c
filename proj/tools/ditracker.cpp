// Command-line front end. Every subcommand resolves defaults < --config file < flags, writes the
// resolved config to <out>/config.json and keeps its outputs inside <out>.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "ditracker/pipeline.hpp"
#include "ditracker/plot.hpp"

using namespace ditracker;

namespace {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::string device = "cpu";
};

fs::path cache_root() {
  const char* env = std::getenv("DITRACKER_CACHE");
  return env && *env ? fs::path(env) : fs::path();
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file; flags override its keys")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed for every RNG stream of the run");
  sub->add_option("--out", c.out, "Output directory (default $DITRACKER_CACHE/<command> or runs/<command>)");
  sub->add_option("--device", c.device, "Compute device; only 'cpu' is available");
}

/// Defaults patched by the config file; the caller then applies flags that were given explicitly.
nlohmann::json resolve(nlohmann::json defaults, const Common& c) {
  if (c.device != "cpu") throw ConfigError("unsupported device '" + c.device + "'; only cpu is available");
  if (!c.config_path.empty()) {
    const nlohmann::json file = read_json(c.config_path);
    if (!file.is_object()) throw ConfigError(c.config_path + ": config must be a JSON object");
    defaults.merge_patch(file);
  }
  return defaults;
}

template <typename V>
void flag(nlohmann::json& j, const char* key, const CLI::Option* opt, const V& value) {
  if (opt->count() > 0) j[key] = value;
}

fs::path out_dir(const Common& c, const std::string& command) {
  if (!c.out.empty()) return c.out;
  const fs::path cache = cache_root();
  return cache.empty() ? fs::path("runs") / command : cache / command;
}

fs::path default_dit_checkpoint() {
  const fs::path cache = cache_root();
  return cache.empty() ? fs::path() : cache / "pretrain-dit" / "checkpoint";
}

std::vector<SyntheticClip> load_corpus(const fs::path& dir) {
  std::vector<SyntheticClip> out;
  for (const auto& d : list_clip_dirs(dir)) out.push_back(load_clip(d));
  if (out.empty()) throw ConfigError("no clip directories under " + dir.string());
  return out;
}

/// Clips from `data` when set, otherwise `count` generated clips with the given seed stream.
std::vector<SyntheticClip> corpus_from(const nlohmann::json& cfg, const std::string& data_key, const std::string& count_key, bool eval_split,
                                       std::uint64_t seed) {
  const std::string data = cfg.value(data_key, std::string());
  if (!data.empty()) return load_corpus(data);
  const GeneratorConfig gen = GeneratorConfig::from_json(cfg.at("generator"));
  const int count = cfg.at(count_key).get<int>();
  if (count < 1) throw ConfigError(count_key + " must be positive");
  return synthetic_corpus(gen, count, [&](int i) { return eval_split ? eval_clip_seed(seed, i) : train_clip_seed(seed, i); });
}

fs::path require_path(const nlohmann::json& cfg, const char* key, const char* what) {
  const std::string p = cfg.value(key, std::string());
  if (p.empty()) throw ConfigError(std::string("missing ") + what + " (--" + key + ")");
  return p;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::string csv_curve(const std::vector<double>& v, const char* header) {
  std::ostringstream s;
  s << "step," << header << '\n';
  for (std::size_t i = 0; i < v.size(); ++i) s << i << ',' << v[i] << '\n';
  return s.str();
}

// ---------------------------------------------------------------------------------------------

struct GenData {
  int count = 256;
  std::string split = "train";
  CLI::Option *count_opt = nullptr, *split_opt = nullptr;
};

int run_gen_data(const Common& c, const GenData& o) {
  nlohmann::json cfg = resolve({{"generator", GeneratorConfig{}.to_json()}, {"count", 256}, {"split", "train"}}, c);
  flag(cfg, "count", o.count_opt, o.count);
  flag(cfg, "split", o.split_opt, o.split);
  cfg["seed"] = c.seed;
  const std::string split = cfg.at("split");
  if (split != "train" && split != "eval") throw ConfigError("split must be train or eval");
  const fs::path out = out_dir(c, "gen-data");
  const auto clips = corpus_from(cfg, "", "count", split == "eval", c.seed);
  char name[32];
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::snprintf(name, sizeof(name), "clip_%05zu", i);
    save_clip(out / name, clips[i]);
  }
  write_json(out / "config.json", cfg);
  log_line("wrote " + std::to_string(clips.size()) + " clips to " + out.string());
  return 0;
}

struct Pretrain {
  std::string data;
  long steps = 0;
  int clips = 0;
  CLI::Option *data_opt = nullptr, *steps_opt = nullptr, *clips_opt = nullptr;
};

int run_pretrain(const Common& c, const Pretrain& o) {
  const GeneratorConfig gen;
  nlohmann::json cfg = resolve({{"generator", gen.to_json()},
                                {"dit", dit_config_for(gen).to_json()},
                                {"schedule", PretrainSchedule{}.to_json()},
                                {"clips", 256},
                                {"heldout_clips", 20},
                                {"data", ""}},
                               c);
  flag(cfg, "data", o.data_opt, o.data);
  flag(cfg, "clips", o.clips_opt, o.clips);
  if (o.steps_opt->count() > 0) cfg["schedule"]["steps"] = o.steps;
  cfg["seed"] = c.seed;
  const DiTConfig dcfg = DiTConfig::from_json(cfg.at("dit"));
  const PretrainSchedule sched = PretrainSchedule::from_json(cfg.at("schedule"));
  const auto corpus = corpus_from(cfg, "data", "clips", false, c.seed);
  const auto heldout = corpus_from(cfg, "", "heldout_clips", true, c.seed);
  const fs::path out = out_dir(c, "pretrain-dit");
  write_json(out / "config.json", cfg);

  DiTBundle dit = make_dit(dcfg, c.seed);
  const PretrainResult r = pretrain_flow_matching(*dit.model, *dit.params, corpus, heldout, sched, c.seed, [&](long step, double loss) {
    if (step % 100 == 0) log_line("step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
  save_dit(out / "checkpoint", dit, {{"seed", c.seed}, {"steps", sched.steps}, {"corpus_hash", corpus_hash(corpus)}});
  write_text(out / "loss.csv", csv_curve(r.loss_curve, "loss"));
  write_json(out / "summary.json", {{"heldout_loss_initial", r.heldout_loss_initial},
                                    {"heldout_loss_final", r.heldout_loss_final},
                                    {"final_train_loss", r.final_train_loss}});
  log_line("held-out velocity MSE " + std::to_string(r.heldout_loss_initial) + " -> " + std::to_string(r.heldout_loss_final));
  return 0;
}

struct Sweep {
  std::string dit, data;
  int clips = 20;
  CLI::Option *dit_opt = nullptr, *data_opt = nullptr, *clips_opt = nullptr;
};

int run_sweep(const Common& c, const Sweep& o) {
  const GeneratorConfig gen;
  nlohmann::json cfg = resolve({{"generator", gen.to_json()}, {"dit", default_dit_checkpoint().string()}, {"clips", 20}, {"data", ""}}, c);
  flag(cfg, "dit", o.dit_opt, o.dit);
  flag(cfg, "data", o.data_opt, o.data);
  flag(cfg, "clips", o.clips_opt, o.clips);
  cfg["seed"] = c.seed;
  const DiTBundle dit = load_dit(require_path(cfg, "dit", "DiT checkpoint"));
  const auto clips = corpus_from(cfg, "data", "clips", true, c.seed);
  const fs::path out = out_dir(c, "sweep");
  write_json(out / "config.json", cfg);
  const SweepResult r = sweep_layers_heads(*dit.model, clips);
  std::ostringstream csv;
  csv << "layer,head,delta_avg\n";
  char buf[96];
  for (std::size_t l = 0; l < r.delta_avg.size(); ++l)
    for (std::size_t m = 0; m < r.delta_avg[l].size(); ++m) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f\n", l + 1, m, r.delta_avg[l][m]);
      csv << buf;
    }
  write_text(out / "sweep.csv", csv.str());
  write_png(out / "heatmap.png", heatmap(r.delta_avg));
  write_json(out / "summary.json", {{"best_layer", r.best_layer}, {"best_head", r.best_head}, {"delta_avg", r.delta_avg}});
  log_line("best layer " + std::to_string(r.best_layer) + " head " + std::to_string(r.best_head));
  return 0;
}

struct Train {
  std::string dit, data, fusion;
  bool use_lora = true;
  long steps = 0;
  int clips = 0, layer = 0, head = 0;
  CLI::Option *dit_opt = nullptr, *data_opt = nullptr, *fusion_opt = nullptr, *lora_opt = nullptr, *steps_opt = nullptr, *clips_opt = nullptr,
              *layer_opt = nullptr, *head_opt = nullptr;
};

int run_train(const Common& c, const Train& o) {
  const GeneratorConfig gen;
  TrackerConfig base;
  base.dit = dit_config_for(gen);
  nlohmann::json cfg = resolve({{"generator", gen.to_json()},
                                {"dit", default_dit_checkpoint().string()},
                                {"tracker", base.to_json()},
                                {"schedule", TrainSchedule{}.to_json()},
                                {"loss", LossConfig{}.to_json()},
                                {"clips", 256},
                                {"data", ""}},
                               c);
  flag(cfg, "dit", o.dit_opt, o.dit);
  flag(cfg, "data", o.data_opt, o.data);
  flag(cfg, "clips", o.clips_opt, o.clips);
  if (o.fusion_opt->count() > 0) cfg["tracker"]["fusion"] = o.fusion;
  if (o.lora_opt->count() > 0) cfg["tracker"]["use_lora"] = o.use_lora;
  if (o.steps_opt->count() > 0) cfg["schedule"]["steps"] = o.steps;
  if (o.layer_opt->count() > 0) cfg["tracker"]["dit"]["extract_layer"] = o.layer;
  if (o.head_opt->count() > 0) cfg["tracker"]["dit"]["extract_head"] = o.head;
  cfg["seed"] = c.seed;

  ArmTraining training;
  training.base = TrackerConfig::from_json(cfg.at("tracker"));
  training.schedule = TrainSchedule::from_json(cfg.at("schedule"));
  training.loss = LossConfig::from_json(cfg.at("loss"));
  training.seed = c.seed;
  const DiTBundle dit = load_dit(require_path(cfg, "dit", "pretrained DiT checkpoint"));
  const auto corpus = corpus_from(cfg, "data", "clips", false, c.seed);
  const fs::path out = out_dir(c, "train");
  write_json(out / "config.json", cfg);

  const ArmSpec arm{training.base.use_lora, training.base.fusion};
  const ArmOutcome r = train_or_load_arm(out / "checkpoint", arm, training, dit, corpus, log_line);
  write_json(out / "summary.json", {{"arm", arm.key()}, {"probe_loss_initial", r.probe_initial}, {"probe_loss_final", r.probe_final}});
  return 0;
}

struct Track {
  std::string model, clip;
  std::vector<std::string> queries;
  bool overlays = true;
};

std::vector<TrackQuery> parse_queries(const std::vector<std::string>& texts) {
  std::vector<TrackQuery> out;
  for (const auto& t : texts) {
    TrackQuery q;
    double f = 0;
    char extra = 0;
    if (std::sscanf(t.c_str(), "%lf,%lf,%lf%c", &f, &q.position.x, &q.position.y, &extra) != 3 || f != std::floor(f))
      throw ConfigError("query must be t,x,y with integer t: " + t);
    q.frame = static_cast<Index>(f);
    out.push_back(q);
  }
  return out;
}

int run_track(const Common& c, const Track& o) {
  nlohmann::json cfg = resolve({{"model", ""}, {"clip", ""}, {"queries", nlohmann::json::array()}, {"overlays", true}}, c);
  if (!o.model.empty()) cfg["model"] = o.model;
  if (!o.clip.empty()) cfg["clip"] = o.clip;
  if (!o.queries.empty()) cfg["queries"] = o.queries;
  cfg["overlays"] = cfg.value("overlays", true) && o.overlays;
  cfg["seed"] = c.seed;
  const auto model = load_tracker(require_path(cfg, "model", "tracker checkpoint"));
  const fs::path clip_dir = require_path(cfg, "clip", "clip directory");
  const SyntheticClip clip = load_clip(clip_dir);
  const Video& video = clip.video;

  std::vector<TrackQuery> queries = parse_queries(cfg.at("queries").get<std::vector<std::string>>());
  if (queries.empty()) {
    // First visible frame of every ground-truth track, else a 4 x 4 grid on frame 0.
    for (const auto& t : clip.tracks) {
      const Index f = t.first_visible();
      // Visible points round into the frame; clamp the sub-pixel remainder.
      const Point2D p = t.positions[static_cast<std::size_t>(f)];
      queries.push_back({f, {std::clamp(p.x, 0.0, static_cast<double>(video.width - 1)), std::clamp(p.y, 0.0, static_cast<double>(video.height - 1))}});
    }
    if (queries.empty())
      for (int gy = 0; gy < 4; ++gy)
        for (int gx = 0; gx < 4; ++gx)
          queries.push_back({0, {(gx + 0.5) * static_cast<double>(video.width - 1) / 4.0, (gy + 0.5) * static_cast<double>(video.height - 1) / 4.0}});
  }
  for (const auto& q : queries)
    if (q.frame < 0 || q.frame >= video.frames || q.position.x < 0 || q.position.y < 0 || q.position.x > static_cast<double>(video.width - 1) ||
        q.position.y > static_cast<double>(video.height - 1))
      throw ConfigError("query outside the clip");

  // Inference runs at the model's resolution; coordinates are mapped back to the clip's pixels.
  const auto& mc = model->config().dit;
  const double sx = static_cast<double>(mc.width - 1) / static_cast<double>(std::max<Index>(video.width - 1, 1));
  const double sy = static_cast<double>(mc.height - 1) / static_cast<double>(std::max<Index>(video.height - 1, 1));
  const bool resize = video.height != mc.height || video.width != mc.width;
  const Video model_video = resize ? resize_video(video, mc.height, mc.width) : video;
  std::vector<TrackQuery> mq = queries;
  for (auto& q : mq) q.position = {q.position.x * sx, q.position.y * sy};
  auto preds = run_tracker(*model, model_video, mq);

  const fs::path out = out_dir(c, "track");
  write_json(out / "config.json", cfg);
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (auto& p : preds[i].positions) p = {p.x / sx, p.y / sy};
    records.push_back({static_cast<long>(i), queries[i], preds[i]});
  }
  write_predictions_jsonl(out / "tracks_pred.jsonl", records);
  if (cfg.at("overlays").get<bool>()) {
    char name[32];
    for (Index f = 0; f < video.frames; ++f) {
      std::snprintf(name, sizeof(name), "%05ld.png", static_cast<long>(f));
      write_png(out / "overlays" / name, trajectory_overlay(video, preds, f));
    }
  }
  log_line("tracked " + std::to_string(queries.size()) + " queries over " + std::to_string(video.frames) + " frames");
  return 0;
}

struct Eval {
  std::string pred, gt, model, data;
  std::vector<std::string> corrupt;
  bool stratify = false;
  int clips = 20;
  Index height = 0, width = 0;
  CLI::Option *clips_opt = nullptr;
};

int run_eval(const Common& c, const Eval& o) {
  const GeneratorConfig gen;
  nlohmann::json cfg = resolve({{"generator", gen.to_json()},
                                {"pred", ""},
                                {"gt", ""},
                                {"model", ""},
                                {"data", ""},
                                {"clips", 20},
                                {"corrupt", nlohmann::json::array()},
                                {"stratify", false},
                                {"height", 0},
                                {"width", 0}},
                               c);
  if (!o.pred.empty()) cfg["pred"] = o.pred;
  if (!o.gt.empty()) cfg["gt"] = o.gt;
  if (!o.model.empty()) cfg["model"] = o.model;
  if (!o.data.empty()) cfg["data"] = o.data;
  flag(cfg, "clips", o.clips_opt, o.clips);
  if (!o.corrupt.empty()) cfg["corrupt"] = o.corrupt;
  if (o.stratify) cfg["stratify"] = true;
  if (o.height > 0) cfg["height"] = o.height;
  if (o.width > 0) cfg["width"] = o.width;
  cfg["seed"] = c.seed;
  const fs::path out = out_dir(c, "eval");

  EvalReport report;
  const std::string pred = cfg.at("pred");
  if (!pred.empty()) {
    const fs::path gt_path = require_path(cfg, "gt", "ground-truth tracks.jsonl");
    Index h = cfg.at("height").get<Index>(), w = cfg.at("width").get<Index>();
    if ((h <= 0 || w <= 0) && fs::exists(gt_path.parent_path() / "meta.json")) {
      const auto meta = read_json(gt_path.parent_path() / "meta.json");
      h = meta.at("H").get<Index>();
      w = meta.at("W").get<Index>();
    }
    if (h <= 0 || w <= 0) h = w = kEvalSize;
    const auto records = read_predictions_jsonl(pred);
    const auto gts = read_tracks_jsonl(gt_path);
    std::vector<PredictedTrack> preds;
    for (const auto& r : records) preds.push_back(r.track);
    if (preds.size() != gts.size()) throw ConfigError("prediction and ground-truth track counts differ");
    report = evaluate_tracks(preds, gts, h, w, true);
    if (!cfg.at("stratify").get<bool>()) {
      report.motion.clear();
      report.reappearance.clear();
    }
  } else {
    const auto model = load_tracker(require_path(cfg, "model", "tracker checkpoint (--model) or --pred/--gt"));
    const auto clips = corpus_from(cfg, "data", "clips", true, c.seed);
    EvalOptions opts;
    opts.stratify = cfg.at("stratify").get<bool>();
    opts.seed = c.seed;
    for (const auto& s : cfg.at("corrupt")) opts.corruptions.push_back(parse_corruption_setting(s.get<std::string>()));
    report = evaluate(clips, tracker_predictor(*model), model->config().dit.height, model->config().dit.width, opts);
  }
  write_json(out / "config.json", cfg);
  write_json(out / "report.json", report.to_json());
  write_text(out / "report.md", report.to_markdown());
  if (!report.corruption_curves.empty()) {
    std::map<std::string, std::vector<double>> curves;
    for (const auto& p : report.corruption_curves) curves[corruption_name(p.setting.kind)].push_back(p.metrics.delta_avg);
    std::vector<std::vector<double>> series;
    for (auto& [k, v] : curves) series.push_back(v);
    write_png(out / "corruption_curves.png", line_plot(series, 0.0, 100.0));
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "AJ %.2f  delta_avg %.2f  OA %.2f", report.overall.aj, report.overall.delta_avg, report.overall.oa);
  log_line(buf);
  return 0;
}

struct Ablation {
  std::string dit;
  long steps = 0;
  int clips = 0, eval_clips = 0;
  CLI::Option *dit_opt = nullptr, *steps_opt = nullptr, *clips_opt = nullptr, *eval_opt = nullptr;
};

int run_ablation(const Common& c, const Ablation& o) {
  const GeneratorConfig gen;
  TrackerConfig base;
  base.dit = dit_config_for(gen);
  nlohmann::json cfg = resolve({{"generator", gen.to_json()},
                                {"dit", default_dit_checkpoint().string()},
                                {"tracker", base.to_json()},
                                {"schedule", TrainSchedule{}.to_json()},
                                {"clips", 256},
                                {"eval_clips", 20}},
                               c);
  flag(cfg, "dit", o.dit_opt, o.dit);
  flag(cfg, "clips", o.clips_opt, o.clips);
  flag(cfg, "eval_clips", o.eval_opt, o.eval_clips);
  if (o.steps_opt->count() > 0) cfg["schedule"]["steps"] = o.steps;
  cfg["seed"] = c.seed;

  ArmTraining training;
  training.base = TrackerConfig::from_json(cfg.at("tracker"));
  training.schedule = TrainSchedule::from_json(cfg.at("schedule"));
  training.seed = c.seed;
  const DiTBundle dit = load_dit(require_path(cfg, "dit", "pretrained DiT checkpoint"));
  const auto corpus = corpus_from(cfg, "", "clips", false, c.seed);
  const auto eval_set = corpus_from(cfg, "", "eval_clips", true, c.seed);
  const fs::path out = out_dir(c, "repro-ablation");
  write_json(out / "config.json", cfg);

  AblationResult result;
  std::vector<ArmSpec> arms;
  for (const auto& rows : {lora_fusion_rows(), fusion_rows()})
    for (const auto& r : rows)
      if (std::none_of(arms.begin(), arms.end(), [&](const ArmSpec& a) { return a.key() == r.arm.key(); })) arms.push_back(r.arm);
  EvalOptions opts;
  opts.stratify = false;
  for (const auto& arm : arms) {
    const ArmOutcome r = train_or_load_arm(out / "arms" / arm.key(), arm, training, dit, corpus, log_line);
    result.arms[arm.key()] = evaluate(eval_set, tracker_predictor(*r.model), r.model->config().dit.height, r.model->config().dit.width, opts).overall;
    result.probe_loss[arm.key()] = {r.probe_initial, r.probe_final};
  }
  const std::string t7 = result.table(lora_fusion_rows(), "LoRA adaptation and conv fusion");
  const std::string t8 = result.table(fusion_rows(), "Cost fusion mechanism");
  write_text(out / "table_lora_fusion.md", t7);
  write_text(out / "table_lora_fusion.csv", result.csv(lora_fusion_rows()));
  write_text(out / "table_fusion.md", t8);
  write_text(out / "table_fusion.csv", result.csv(fusion_rows()));
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, m] : result.arms)
    j[k] = {{"metrics", m.to_json()}, {"probe_loss_initial", result.probe_loss[k].first}, {"probe_loss_final", result.probe_loss[k].second}};
  write_json(out / "ablation.json", j);
  std::cout << t7 << '\n' << t8;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point tracking with video diffusion transformer features: data, pretraining, training, inference, evaluation"};
  app.require_subcommand(1);
  Common common;

  GenData gd;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic clip corpus");
  add_common(gen, common);
  gd.count_opt = gen->add_option("--count", gd.count, "Number of clips");
  gd.split_opt = gen->add_option("--split", gd.split, "Seed stream: train or eval");

  Pretrain pt;
  auto* pre = app.add_subcommand("pretrain-dit", "Flow-matching pretraining of the video DiT");
  add_common(pre, common);
  pt.data_opt = pre->add_option("--data", pt.data, "Clip corpus directory (default: generated clips)");
  pt.steps_opt = pre->add_option("--steps", pt.steps, "Optimizer steps");
  pt.clips_opt = pre->add_option("--clips", pt.clips, "Generated corpus size when --data is absent");

  Sweep sw;
  auto* swp = app.add_subcommand("sweep", "Zero-shot accuracy of every (layer, head) pair");
  add_common(swp, common);
  sw.dit_opt = swp->add_option("--dit", sw.dit, "DiT checkpoint directory");
  sw.data_opt = swp->add_option("--data", sw.data, "Eval clip directory (default: generated eval clips)");
  sw.clips_opt = swp->add_option("--clips", sw.clips, "Generated eval clips");

  Train tr;
  auto* trn = app.add_subcommand("train", "Train the tracker on top of a pretrained DiT");
  add_common(trn, common);
  tr.dit_opt = trn->add_option("--dit", tr.dit, "Pretrained DiT checkpoint directory");
  tr.data_opt = trn->add_option("--data", tr.data, "Training clip directory (default: generated clips)");
  tr.clips_opt = trn->add_option("--clips", tr.clips, "Generated corpus size");
  tr.fusion_opt = trn->add_option("--fusion", tr.fusion, "none | feature_concat | cost_sum | cost_concat")
                      ->check(CLI::IsMember({"none", "feature_concat", "cost_sum", "cost_concat"}));
  tr.lora_opt = trn->add_option("--use-lora", tr.use_lora, "Attach LoRA adapters to the DiT (true/false)");
  tr.steps_opt = trn->add_option("--steps", tr.steps, "Optimizer steps");
  tr.layer_opt = trn->add_option("--layer", tr.layer, "DiT layer (1-based) whose query/key features are used");
  tr.head_opt = trn->add_option("--head", tr.head, "DiT head (0-based)");

  Track tk;
  auto* trk = app.add_subcommand("track", "Track points through a clip directory");
  add_common(trk, common);
  trk->add_option("--model", tk.model, "Tracker checkpoint directory");
  trk->add_option("--clip", tk.clip, "Clip directory (frames/, optional tracks.jsonl)");
  trk->add_option("--query", tk.queries, "Query t,x,y in clip pixels (repeatable); default: first visible GT points");
  trk->add_flag("!--no-overlays", tk.overlays, "Skip trajectory overlay PNGs");

  Eval ev;
  auto* evl = app.add_subcommand("eval", "Metrics report for predictions or a trained model");
  add_common(evl, common);
  evl->add_option("--pred", ev.pred, "tracks_pred.jsonl to score against --gt");
  evl->add_option("--gt", ev.gt, "Ground-truth tracks.jsonl");
  evl->add_option("--height", ev.height, "Frame height of --pred/--gt coordinates (default meta.json beside --gt, else 256)");
  evl->add_option("--width", ev.width, "Frame width of --pred/--gt coordinates");
  evl->add_option("--model", ev.model, "Tracker checkpoint to evaluate on clips");
  evl->add_option("--data", ev.data, "Eval clip directory (default: generated eval clips)");
  ev.clips_opt = evl->add_option("--clips", ev.clips, "Generated eval clips");
  evl->add_option("--corrupt", ev.corrupt, "kind:severity, repeatable (gaussian_noise, motion_blur, brightness, contrast; 1-5)");
  evl->add_flag("--stratify", ev.stratify, "Report motion and reappearance strata");

  Ablation ab;
  auto* abl = app.add_subcommand("repro-ablation", "Train and compare the LoRA/fusion arm matrix");
  add_common(abl, common);
  ab.dit_opt = abl->add_option("--dit", ab.dit, "Pretrained DiT checkpoint directory");
  ab.steps_opt = abl->add_option("--steps", ab.steps, "Training steps per arm");
  ab.clips_opt = abl->add_option("--clips", ab.clips, "Training clips");
  ab.eval_opt = abl->add_option("--eval-clips", ab.eval_clips, "Eval clips");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->check_name(argv[1]);
    if (!known) {
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(common, gd);
    if (pre->parsed()) return run_pretrain(common, pt);
    if (swp->parsed()) return run_sweep(common, sw);
    if (trn->parsed()) return run_train(common, tr);
    if (trk->parsed()) return run_track(common, tk);
    if (evl->parsed()) return run_eval(common, ev);
    if (abl->parsed()) return run_ablation(common, ab);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
