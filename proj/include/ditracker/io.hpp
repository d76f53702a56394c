#pragma once

// On-disk formats: PNG frames, clip directories, prediction files, checkpoints.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/datagen.hpp"
#include "ditracker/layers.hpp"
#include "ditracker/metrics.hpp"
#include "ditracker/refiner.hpp"

namespace ditracker {

namespace fs = std::filesystem;

/// 8-bit RGB image, row-major, channels last.
struct RgbImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(Index h, Index w, std::uint8_t fill = 0) : height(h), width(w), pixels(static_cast<std::size_t>(h * w * 3), fill) {}
  std::uint8_t* at(Index y, Index x) { return pixels.data() + static_cast<std::size_t>((y * width + x) * 3); }
};

void write_png(const fs::path& path, const RgbImage& image);
RgbImage read_png(const fs::path& path);

RgbImage frame_image(const Video& video, Index frame);

// ---------------------------------------------------------------------------------------------
// Clip directories: frames/%05d.png, tracks.jsonl, meta.json

void save_clip(const fs::path& dir, const SyntheticClip& clip);
/// Tracks are optional; a directory without tracks.jsonl loads with an empty track list.
SyntheticClip load_clip(const fs::path& dir);
/// Every immediate subdirectory holding a meta.json, in name order.
std::vector<fs::path> list_clip_dirs(const fs::path& root);

void write_tracks_jsonl(const fs::path& path, const std::vector<GroundTruthTrack>& tracks);
std::vector<GroundTruthTrack> read_tracks_jsonl(const fs::path& path);

struct PredictionRecord {
  long id = 0;
  TrackQuery query;
  PredictedTrack track;
};

void write_predictions_jsonl(const fs::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions_jsonl(const fs::path& path);

/// Writes JSON with a trailing newline; numbers use nlohmann's shortest round-trip form.
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// FNV-1a over pixels and tracks of every clip, as 16 hex digits.
std::string corpus_hash(const std::vector<SyntheticClip>& clips);
/// FNV-1a over parameter names and values whose name starts with `prefix`.
std::string parameter_hash(const ParameterSet<float>& params, const std::string& prefix = "");

// ---------------------------------------------------------------------------------------------
// Checkpoints: <dir>/params.bin plus <dir>/manifest.json

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json manifest;
  std::map<std::string, Matrix<float>> tensors;
};

void save_checkpoint(const fs::path& dir, const ParameterSet<float>& params, const nlohmann::json& manifest);
Checkpoint load_checkpoint(const fs::path& dir);

/// Copies every checkpoint tensor whose name exists in `params`. Throws when a parameter of `params`
/// matching `prefix` is absent or differently shaped.
void load_parameters(ParameterSet<float>& params, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace ditracker
