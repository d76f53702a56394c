#pragma once

// Glue shared by the CLI and the acceptance runner: corpora, checkpoints, predictors, ablation arms.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ditracker/evaluation.hpp"
#include "ditracker/io.hpp"
#include "ditracker/pretrain.hpp"
#include "ditracker/training.hpp"

namespace ditracker {

/// Corpus seeds derived from a run seed; run seed 0 gives training clips 1000.. and eval clips 900000..
std::uint64_t train_clip_seed(std::uint64_t run_seed, int index);
std::uint64_t eval_clip_seed(std::uint64_t run_seed, int index);

std::vector<SyntheticClip> synthetic_corpus(const GeneratorConfig& config, int count, const std::function<std::uint64_t(int)>& seed_of);

/// DiT sized for the generator's clips (desk scale: 32 x 48 frames, 8 x 12 token grid).
DiTConfig dit_config_for(const GeneratorConfig& gen);

// ---------------------------------------------------------------------------------------------
// Checkpoints

struct DiTBundle {
  std::unique_ptr<ParameterSet<float>> params;
  std::unique_ptr<DiTModel<float>> model;
  nlohmann::json manifest;
};

DiTBundle make_dit(const DiTConfig& config, std::uint64_t seed);
void save_dit(const fs::path& dir, const DiTBundle& dit, const nlohmann::json& extra);
/// Throws PreconditionError when the directory holds no DiT checkpoint.
DiTBundle load_dit(const fs::path& dir);

void save_tracker(const fs::path& dir, const TrackerModel<float>& model, const nlohmann::json& extra);
/// Rebuilds the model from the manifest's config and restores every tensor.
std::unique_ptr<TrackerModel<float>> load_tracker(const fs::path& dir);

/// Sigmoid-probability predictions of the model's final iteration, without gradients.
std::vector<PredictedTrack> run_tracker(const TrackerModel<float>& model, const Video& video, const std::vector<TrackQuery>& queries);
Predictor tracker_predictor(const TrackerModel<float>& model);

// ---------------------------------------------------------------------------------------------
// Ablation arms

struct ArmSpec {
  bool use_lora = true;
  FusionMode fusion = FusionMode::kCostConcat;

  std::string key() const;  // e.g. "lora-cost_concat"
};

struct TableRow {
  std::string label;  // roman numeral
  ArmSpec arm;
};

/// LoRA x conv-fusion grid: I frozen, II frozen + cost concat, III LoRA, IV LoRA + cost concat.
std::vector<TableRow> lora_fusion_rows();
/// Fusion mechanisms on a LoRA DiT: I none, II feature concat, III cost sum, IV cost concat.
std::vector<TableRow> fusion_rows();

struct ArmTraining {
  TrackerConfig base;  // fusion and use_lora are overridden per arm
  TrainSchedule schedule;
  LossConfig loss;
  std::uint64_t seed = 0;
};

struct ArmOutcome {
  std::unique_ptr<TrackerModel<float>> model;
  double probe_initial = 0.0;
  double probe_final = 0.0;
  bool cached = false;
};

/// Trains the arm from the DiT checkpoint, or loads it from `dir` when a checkpoint there was made
/// with the same config, schedule, seed and corpus. Writes loss.csv next to the checkpoint.
ArmOutcome train_or_load_arm(const fs::path& dir, const ArmSpec& arm, const ArmTraining& training,
                             const DiTBundle& dit, const std::vector<SyntheticClip>& corpus,
                             const std::function<void(const std::string&)>& log = {});

struct AblationResult {
  std::map<std::string, MetricSummary> arms;  // by ArmSpec::key
  std::map<std::string, std::pair<double, double>> probe_loss;  // initial, final

  /// Markdown table over `rows` with AJ, delta_avg and OA columns.
  std::string table(const std::vector<TableRow>& rows, const std::string& title) const;
  std::string csv(const std::vector<TableRow>& rows) const;
};

}  // namespace ditracker
