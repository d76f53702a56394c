#include "ditracker/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ditracker {

namespace {

constexpr double kTwoPi = 6.283185307179586;

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Texture random_texture(std::mt19937_64& rng, double min_freq, double max_freq, double min_amp, double max_amp, int gratings) {
  Texture t;
  for (auto& c : t.base) c = static_cast<float>(uniform(rng, 0.15, 0.85));
  for (int g = 0; g < gratings; ++g) {
    Texture::Grating gr;
    const double freq = uniform(rng, min_freq, max_freq);
    const double angle = uniform(rng, 0.0, kTwoPi);
    gr.fx = freq * std::cos(angle);
    gr.fy = freq * std::sin(angle);
    gr.phase = uniform(rng, 0.0, kTwoPi);
    for (auto& a : gr.amplitude) a = static_cast<float>(uniform(rng, min_amp, max_amp));
    t.gratings.push_back(gr);
  }
  return t;
}

bool shape_contains(ShapeKind kind, double hw, double hh, double u, double v) {
  if (hw <= 0 || hh <= 0) return false;
  switch (kind) {
    case ShapeKind::kRectangle:
      return std::abs(u) <= hw && std::abs(v) <= hh;
    case ShapeKind::kEllipse:
      return (u / hw) * (u / hw) + (v / hh) * (v / hh) <= 1.0;
    case ShapeKind::kDiamond:
      return std::abs(u) / hw + std::abs(v) / hh <= 1.0;
  }
  return false;
}

}  // namespace

Index GroundTruthTrack::first_visible() const {
  for (std::size_t i = 0; i < visible.size(); ++i)
    if (visible[i]) return static_cast<Index>(i);
  return -1;
}

void validate_track(const GroundTruthTrack& track, Index frames) {
  require(track.frames() == frames && static_cast<Index>(track.visible.size()) == frames, "track length does not match the clip");
  for (const auto& p : track.positions) require(std::isfinite(p.x) && std::isfinite(p.y), "track has a non-finite position");
  require(track.first_visible() >= 0, "track is never visible");
}

std::array<float, 3> Texture::color(double u, double v) const {
  std::array<float, 3> c = base;
  for (const auto& g : gratings) {
    const float s = static_cast<float>(std::sin(kTwoPi * (g.fx * u + g.fy * v) + g.phase));
    for (int k = 0; k < 3; ++k) c[k] += g.amplitude[k] * s;
  }
  for (auto& x : c) x = std::clamp(x, 0.0f, 1.0f);
  return c;
}

Point2D SceneObject::center(Index frame) const {
  const double before = static_cast<double>(std::min(frame, bend_frame));
  const double after = static_cast<double>(std::max<Index>(0, frame - bend_frame));
  return {start.x + velocity.x * before + velocity_after.x * after, start.y + velocity.y * before + velocity_after.y * after};
}

bool SceneObject::covers(Point2D c, double px, double py) const {
  return shape_contains(kind, half_width, half_height, px - c.x, py - c.y);
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.frames = j.value("frames", c.frames);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.min_half_size = j.value("min_half_size", c.min_half_size);
  c.max_half_size = j.value("max_half_size", c.max_half_size);
  c.min_speed = j.value("min_speed", c.min_speed);
  c.max_speed = j.value("max_speed", c.max_speed);
  c.min_occluders = j.value("min_occluders", c.min_occluders);
  c.max_occluders = j.value("max_occluders", c.max_occluders);
  c.tracks_per_object = j.value("tracks_per_object", c.tracks_per_object);
  return c;
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"frames", frames},
          {"height", height},
          {"width", width},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"min_half_size", min_half_size},
          {"max_half_size", max_half_size},
          {"min_speed", min_speed},
          {"max_speed", max_speed},
          {"min_occluders", min_occluders},
          {"max_occluders", max_occluders},
          {"tracks_per_object", tracks_per_object}};
}

Scene sample_scene(const GeneratorConfig& config, std::uint64_t seed) {
  require(config.frames >= 2, "generator: at least two frames required");
  require(config.height >= 1 && config.width >= 1, "generator: zero-size frame");
  require(config.min_objects >= 1 && config.max_objects >= config.min_objects, "generator: invalid object count range");
  require(config.min_half_size >= 2.0 && config.max_half_size >= config.min_half_size, "generator: invalid size range");
  require(config.min_speed >= 0.0 && config.max_speed >= config.min_speed, "generator: invalid speed range");
  require(config.min_occluders >= 0 && config.max_occluders >= config.min_occluders, "generator: invalid occluder range");
  require(config.tracks_per_object >= 1, "generator: tracks_per_object must be positive");

  std::mt19937_64 rng(seed);
  Scene scene;
  scene.frames = config.frames;
  scene.height = config.height;
  scene.width = config.width;
  scene.background = random_texture(rng, 0.02, 0.12, 0.04, 0.12, 4);

  const int objects = uniform_int(rng, config.min_objects, config.max_objects);
  const int occluders = uniform_int(rng, config.min_occluders, config.max_occluders);
  std::vector<int> depth(static_cast<std::size_t>(objects));
  std::iota(depth.begin(), depth.end(), 0);
  std::shuffle(depth.begin(), depth.end(), rng);

  auto add_tracks = [&](SceneObject& o) {
    const double iw = o.half_width - 1.0;
    const double ih = o.half_height - 1.0;
    while (static_cast<int>(o.track_offsets.size()) < config.tracks_per_object) {
      const double u = uniform(rng, -iw, iw);
      const double v = uniform(rng, -ih, ih);
      if (shape_contains(o.kind, iw, ih, u, v)) o.track_offsets.push_back({u, v});
    }
  };

  for (int i = 0; i < objects; ++i) {
    SceneObject o;
    o.kind = static_cast<ShapeKind>(uniform_int(rng, 0, 2));
    o.half_width = uniform(rng, config.min_half_size, config.max_half_size);
    o.half_height = uniform(rng, config.min_half_size, config.max_half_size);
    o.start = {uniform(rng, 0.0, static_cast<double>(config.width - 1)), uniform(rng, 0.0, static_cast<double>(config.height - 1))};
    const double speed = uniform(rng, config.min_speed, config.max_speed);
    const double angle = uniform(rng, 0.0, kTwoPi);
    o.velocity = {speed * std::cos(angle), speed * std::sin(angle)};
    const double speed2 = std::clamp(speed * uniform(rng, 0.5, 1.5), config.min_speed, config.max_speed);
    const double angle2 = angle + uniform(rng, -1.5707963, 1.5707963);
    o.velocity_after = {speed2 * std::cos(angle2), speed2 * std::sin(angle2)};
    o.bend_frame = uniform_int(rng, 1, static_cast<int>(config.frames - 1));
    o.depth = depth[static_cast<std::size_t>(i)];
    o.texture = random_texture(rng, 0.06, 0.3, 0.06, 0.22, 3);
    add_tracks(o);
    scene.objects.push_back(std::move(o));
  }
  for (int i = 0; i < occluders; ++i) {
    SceneObject o;
    o.kind = ShapeKind::kRectangle;
    const bool vertical = uniform(rng, 0.0, 1.0) < 0.5;
    const double thickness = uniform(rng, 2.0, 3.5);
    o.half_width = vertical ? thickness : static_cast<double>(config.width);
    o.half_height = vertical ? static_cast<double>(config.height) : thickness;
    o.start = {uniform(rng, 0.0, static_cast<double>(config.width - 1)), uniform(rng, 0.0, static_cast<double>(config.height - 1))};
    const double drift = uniform(rng, -0.5, 0.5);
    o.velocity = vertical ? Point2D{drift, 0.0} : Point2D{0.0, drift};
    o.velocity_after = o.velocity;
    o.bend_frame = config.frames;
    o.depth = objects + i;
    o.texture = random_texture(rng, 0.06, 0.3, 0.06, 0.22, 3);
    add_tracks(o);
    scene.objects.push_back(std::move(o));
  }
  return scene;
}

int topmost_object(const Scene& scene, Index frame, Index px, Index py) {
  int best = -1;
  int best_depth = -1;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (o.depth > best_depth && o.covers(o.center(frame), static_cast<double>(px), static_cast<double>(py))) {
      best = static_cast<int>(i);
      best_depth = o.depth;
    }
  }
  return best;
}

SyntheticClip render_scene(const Scene& scene, std::uint64_t seed) {
  require(scene.frames >= 1 && scene.height >= 1 && scene.width >= 1, "render_scene: zero-size frame");
  SyntheticClip clip;
  clip.seed = seed;
  clip.video = Video(scene.frames, scene.height, scene.width);

  // Objects drawn back to front; the id buffer keeps the owner of every pixel.
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scene.objects[a].depth < scene.objects[b].depth; });
  std::vector<int> owner(static_cast<std::size_t>(scene.frames * scene.height * scene.width), -1);

  for (Index f = 0; f < scene.frames; ++f) {
    for (Index y = 0; y < scene.height; ++y) {
      for (Index x = 0; x < scene.width; ++x) {
        const auto bg = scene.background.color(static_cast<double>(x), static_cast<double>(y));
        for (int c = 0; c < 3; ++c) clip.video.at(f, y, x, c) = bg[static_cast<std::size_t>(c)];
      }
    }
    for (std::size_t oi : order) {
      const auto& o = scene.objects[oi];
      const Point2D c = o.center(f);
      const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(c.y - o.half_height)));
      const Index y1 = std::min<Index>(scene.height - 1, static_cast<Index>(std::ceil(c.y + o.half_height)));
      const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(c.x - o.half_width)));
      const Index x1 = std::min<Index>(scene.width - 1, static_cast<Index>(std::ceil(c.x + o.half_width)));
      for (Index y = y0; y <= y1; ++y) {
        for (Index x = x0; x <= x1; ++x) {
          const double px = static_cast<double>(x);
          const double py = static_cast<double>(y);
          if (!o.covers(c, px, py)) continue;
          const auto col = o.texture.color(px - c.x, py - c.y);
          for (int ch = 0; ch < 3; ++ch) clip.video.at(f, y, x, ch) = col[static_cast<std::size_t>(ch)];
          owner[static_cast<std::size_t>((f * scene.height + y) * scene.width + x)] = static_cast<int>(oi);
        }
      }
    }
  }

  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const auto& o = scene.objects[oi];
    for (const auto& off : o.track_offsets) {
      GroundTruthTrack t;
      for (Index f = 0; f < scene.frames; ++f) {
        const Point2D c = o.center(f);
        const Point2D p{c.x + off.x, c.y + off.y};
        const double rx = std::round(p.x);
        const double ry = std::round(p.y);
        bool vis = rx >= 0 && ry >= 0 && rx < static_cast<double>(scene.width) && ry < static_cast<double>(scene.height);
        if (vis) {
          const auto px = static_cast<Index>(rx);
          const auto py = static_cast<Index>(ry);
          vis = owner[static_cast<std::size_t>((f * scene.height + py) * scene.width + px)] == static_cast<int>(oi);
        }
        t.positions.push_back(p);
        t.visible.push_back(vis);
      }
      if (t.first_visible() >= 0) clip.tracks.push_back(std::move(t));
    }
  }
  return clip;
}

SyntheticClip generate_clip(const GeneratorConfig& config, std::uint64_t seed) {
  return render_scene(sample_scene(config, seed), seed);
}

// ---------------------------------------------------------------------------------------------

Video resize_video(const Video& video, Index out_h, Index out_w) {
  require(out_h >= 1 && out_w >= 1, "resize_video: target dimensions must be positive");
  if (out_h == video.height && out_w == video.width) return video;
  Video out(video.frames, out_h, out_w);
  const auto stencils = resize_stencils<double>(video.height, video.width, out_h, out_w, ResizeMode::kCornerAligned);
  const Index cells = video.height * video.width;
  for (Index f = 0; f < video.frames; ++f) {
    for (Index i = 0; i < out_h * out_w; ++i) {
      const auto& s = stencils[static_cast<std::size_t>(i)];
      for (int c = 0; c < 3; ++c) {
        double v = 0;
        for (int k = 0; k < 4; ++k) v += s.weight[k] * video.pixels[static_cast<std::size_t>((f * cells + s.cell[k]) * 3 + c)];
        out.pixels[static_cast<std::size_t>((f * out_h * out_w + i) * 3 + c)] = static_cast<float>(v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

CorruptionKind parse_corruption(const std::string& name) {
  if (name == "gaussian_noise") return CorruptionKind::kGaussianNoise;
  if (name == "motion_blur") return CorruptionKind::kMotionBlur;
  if (name == "brightness") return CorruptionKind::kBrightness;
  if (name == "contrast") return CorruptionKind::kContrast;
  throw std::invalid_argument("unknown corruption kind: " + name);
}

std::string corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise:
      return "gaussian_noise";
    case CorruptionKind::kMotionBlur:
      return "motion_blur";
    case CorruptionKind::kBrightness:
      return "brightness";
    case CorruptionKind::kContrast:
      return "contrast";
  }
  return "unknown";
}

double corruption_parameter(CorruptionKind kind, int severity) {
  require(severity >= 1 && severity <= 5, "corruption severity must be in 1..5");
  static constexpr std::array<double, 5> kNoise{0.04, 0.06, 0.09, 0.13, 0.19};
  static constexpr std::array<double, 5> kBlur{3, 5, 9, 13, 17};
  static constexpr std::array<double, 5> kBrightness{0.05, 0.10, 0.15, 0.20, 0.30};
  static constexpr std::array<double, 5> kContrast{0.75, 0.6, 0.45, 0.3, 0.2};
  const auto i = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::kGaussianNoise:
      return kNoise[i];
    case CorruptionKind::kMotionBlur:
      return kBlur[i];
    case CorruptionKind::kBrightness:
      return kBrightness[i];
    case CorruptionKind::kContrast:
      return kContrast[i];
  }
  throw std::invalid_argument("unknown corruption kind");
}

Video corrupt(const Video& video, CorruptionKind kind, int severity, std::uint64_t seed) {
  const double param = corruption_parameter(kind, severity);
  Video out = video;
  std::mt19937_64 rng(seed);
  switch (kind) {
    case CorruptionKind::kGaussianNoise: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (auto& v : out.pixels) v = static_cast<float>(std::clamp(v + param * normal(rng), 0.0, 1.0));
      break;
    }
    case CorruptionKind::kMotionBlur: {
      const double angle = std::uniform_real_distribution<double>(0.0, kTwoPi / 2.0)(rng);
      const double dx = std::cos(angle);
      const double dy = std::sin(angle);
      const int length = static_cast<int>(param);
      const int half = (length - 1) / 2;
      const Index cells = video.height * video.width;
      for (Index f = 0; f < video.frames; ++f) {
        for (Index y = 0; y < video.height; ++y) {
          for (Index x = 0; x < video.width; ++x) {
            std::array<double, 3> acc{};
            for (int k = -half; k <= half; ++k) {
              const auto s = bilinear_stencil<double>(static_cast<double>(x) + k * dx, static_cast<double>(y) + k * dy, video.height, video.width);
              for (int t = 0; t < 4; ++t)
                for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += s.weight[t] * video.pixels[static_cast<std::size_t>((f * cells + s.cell[t]) * 3 + c)];
            }
            for (int c = 0; c < 3; ++c) out.at(f, y, x, c) = static_cast<float>(std::clamp(acc[static_cast<std::size_t>(c)] / length, 0.0, 1.0));
          }
        }
      }
      break;
    }
    case CorruptionKind::kBrightness:
      for (auto& v : out.pixels) v = static_cast<float>(std::clamp(v + param, 0.0, 1.0));
      break;
    case CorruptionKind::kContrast: {
      const std::size_t frame_size = static_cast<std::size_t>(video.height * video.width * 3);
      for (Index f = 0; f < video.frames; ++f) {
        const auto begin = out.pixels.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(f) * frame_size);
        const double mean = std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(frame_size), 0.0) / static_cast<double>(frame_size);
        std::for_each(begin, begin + static_cast<std::ptrdiff_t>(frame_size),
                      [&](float& v) { v = static_cast<float>(std::clamp((v - mean) * param + mean, 0.0, 1.0)); });
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

std::string motion_bin_name(MotionBin bin) {
  switch (bin) {
    case MotionBin::kStatic:
      return "[0%,0.5%)";
    case MotionBin::kNormal:
      return "[0.5%,1.5%)";
    case MotionBin::kDynamic:
      return "[1.5%,5%)";
    case MotionBin::kOutOfRange:
      return "out-of-range";
  }
  return "?";
}

std::string reappearance_bin_name(ReappearanceBin bin) {
  switch (bin) {
    case ReappearanceBin::kLow:
      return "[0,1)";
    case ReappearanceBin::kMedium:
      return "[1,3)";
    case ReappearanceBin::kHigh:
      return "[3,1000)";
  }
  return "?";
}

MotionBin motion_bin_for(double percent) {
  if (percent < 0.5) return MotionBin::kStatic;
  if (percent < 1.5) return MotionBin::kNormal;
  if (percent < 5.0) return MotionBin::kDynamic;
  return MotionBin::kOutOfRange;
}

ReappearanceBin reappearance_bin_for(int count) {
  if (count < 1) return ReappearanceBin::kLow;
  if (count < 3) return ReappearanceBin::kMedium;
  return ReappearanceBin::kHigh;
}

StratumLabel stratify(const GroundTruthTrack& track, double frame_diag) {
  require(track.frames() >= 2, "stratify: at least two frames required");
  require(static_cast<Index>(track.visible.size()) == track.frames(), "stratify: visibility length mismatch");
  require(frame_diag > 0.0, "stratify: frame diagonal must be positive");
  double total = 0.0;
  int pairs = 0;
  int reappear = 0;
  for (std::size_t i = 0; i + 1 < track.positions.size(); ++i) {
    if (track.visible[i] && track.visible[i + 1]) {
      total += std::hypot(track.positions[i + 1].x - track.positions[i].x, track.positions[i + 1].y - track.positions[i].y);
      ++pairs;
    }
    if (!track.visible[i] && track.visible[i + 1]) ++reappear;
  }
  StratumLabel label;
  label.mean_displacement_percent = pairs > 0 ? 100.0 * total / pairs / frame_diag : 0.0;
  label.reappearances = reappear;
  label.motion = motion_bin_for(label.mean_displacement_percent);
  label.reappearance = reappearance_bin_for(reappear);
  return label;
}

}  // namespace ditracker
