#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditracker/video.hpp"

namespace ditracker {

/// Per-frame ground-truth positions (pixels) and visibility of one physical point.
struct GroundTruthTrack {
  std::vector<Point2D> positions;
  std::vector<bool> visible;

  Index frames() const { return static_cast<Index>(positions.size()); }
  /// First visible frame, or -1 when the point is never visible.
  Index first_visible() const;
};

/// Validates lengths, finiteness and the at-least-one-visible-frame rule.
void validate_track(const GroundTruthTrack& track, Index frames);

struct SyntheticClip {
  Video video;
  std::vector<GroundTruthTrack> tracks;
  std::uint64_t seed = 0;
};

enum class ShapeKind { kRectangle, kEllipse, kDiamond };

/// Procedural texture evaluated in object-local coordinates so it moves rigidly with the shape.
struct Texture {
  std::array<float, 3> base{0.5f, 0.5f, 0.5f};
  struct Grating {
    double fx = 0, fy = 0, phase = 0;
    std::array<float, 3> amplitude{};
  };
  std::vector<Grating> gratings;

  std::array<float, 3> color(double u, double v) const;
};

/// One moving shape. Positions follow a two-piece linear path that bends at `bend_frame`.
struct SceneObject {
  ShapeKind kind = ShapeKind::kRectangle;
  double half_width = 4;
  double half_height = 4;
  Point2D start;
  Point2D velocity;
  Point2D velocity_after;
  Index bend_frame = 0;
  int depth = 0;  // larger is closer to the camera
  Texture texture;
  std::vector<Point2D> track_offsets;  // object-local offsets of tracked points

  Point2D center(Index frame) const;
  bool covers(Point2D center, double px, double py) const;
};

struct Scene {
  Index frames = 8;
  Index height = 32;
  Index width = 48;
  Texture background;
  std::vector<SceneObject> objects;
};

struct GeneratorConfig {
  Index frames = 8;
  Index height = 32;
  Index width = 48;
  int min_objects = 2;
  int max_objects = 8;
  double min_half_size = 3.0;
  double max_half_size = 8.0;
  double min_speed = 0.0;  // pixels per frame
  double max_speed = 2.0;
  int min_occluders = 0;
  int max_occluders = 1;
  int tracks_per_object = 4;

  static GeneratorConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Samples a random scene description; rendering is separate so tests can script scenes.
Scene sample_scene(const GeneratorConfig& config, std::uint64_t seed);

/// Index of the topmost object covering pixel (px, py) at `frame`, or -1 for background.
int topmost_object(const Scene& scene, Index frame, Index px, Index py);

/// Renders frames and ground-truth tracks (in object order, offsets in order). A point is
/// visible iff its rounded pixel lies in the frame and its own object is topmost there.
SyntheticClip render_scene(const Scene& scene, std::uint64_t seed);

SyntheticClip generate_clip(const GeneratorConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Corruptions

enum class CorruptionKind { kGaussianNoise, kMotionBlur, kBrightness, kContrast };

CorruptionKind parse_corruption(const std::string& name);
std::string corruption_name(CorruptionKind kind);

/// Severity parameter for kinds 1..5: noise sigma, blur length (pixels), brightness shift, contrast gain.
double corruption_parameter(CorruptionKind kind, int severity);

Video corrupt(const Video& video, CorruptionKind kind, int severity, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Difficulty stratification

enum class MotionBin { kStatic, kNormal, kDynamic, kOutOfRange };
enum class ReappearanceBin { kLow, kMedium, kHigh };

struct StratumLabel {
  MotionBin motion = MotionBin::kStatic;
  ReappearanceBin reappearance = ReappearanceBin::kLow;
  double mean_displacement_percent = 0.0;
  int reappearances = 0;
};

std::string motion_bin_name(MotionBin bin);
std::string reappearance_bin_name(ReappearanceBin bin);

MotionBin motion_bin_for(double percent);
ReappearanceBin reappearance_bin_for(int count);

/// Mean |P_{i+1} - P_i| / frame_diag over consecutive visible pairs (percent), and the count of
/// occluded -> visible transitions.
StratumLabel stratify(const GroundTruthTrack& track, double frame_diag);

}  // namespace ditracker
