#include "ditracker/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ditracker {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'T', 'C', 'K', 'P', 'T', '\0'};

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const fs::path& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("truncated checkpoint " + path.string());
  return v;
}

nlohmann::json track_json(long id, const GroundTruthTrack& t) {
  nlohmann::json xy = nlohmann::json::array();
  for (const auto& p : t.positions) xy.push_back({p.x, p.y});
  std::vector<bool> vis(t.visible.begin(), t.visible.end());
  return {{"id", id}, {"xy", xy}, {"visible", vis}};
}

std::vector<Point2D> parse_xy(const nlohmann::json& j) {
  std::vector<Point2D> out;
  for (const auto& p : j) {
    require(p.is_array() && p.size() == 2, "xy entries must be [x, y] pairs");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

template <typename Fn>
void for_each_line(const fs::path& path, Fn&& fn) {
  auto in = open_in(path);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void write_png(const fs::path& path, const RgbImage& image) {
  require(image.height >= 1 && image.width >= 1, "write_png: empty image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + img.message);
}

RgbImage read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError("cannot read " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<Index>(img.height), static_cast<Index>(img.width));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  return out;
}

RgbImage frame_image(const Video& video, Index frame) {
  require(frame >= 0 && frame < video.frames, "frame_image: frame out of range");
  RgbImage img(video.height, video.width);
  const std::size_t off = video.offset(frame, 0, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::clamp(video.pixels[off + i], 0.0f, 1.0f);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return img;
}

void save_clip(const fs::path& dir, const SyntheticClip& clip) {
  fs::create_directories(dir / "frames");
  char name[32];
  for (Index f = 0; f < clip.video.frames; ++f) {
    std::snprintf(name, sizeof(name), "%05ld.png", static_cast<long>(f));
    write_png(dir / "frames" / name, frame_image(clip.video, f));
  }
  write_tracks_jsonl(dir / "tracks.jsonl", clip.tracks);
  write_json(dir / "meta.json", {{"F", clip.video.frames}, {"H", clip.video.height}, {"W", clip.video.width}, {"seed", clip.seed}});
}

SyntheticClip load_clip(const fs::path& dir) {
  const nlohmann::json meta = read_json(dir / "meta.json");
  SyntheticClip clip;
  Index frames = 0, height = 0, width = 0;
  try {
    frames = meta.at("F").get<Index>();
    height = meta.at("H").get<Index>();
    width = meta.at("W").get<Index>();
    clip.seed = meta.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument((dir / "meta.json").string() + ": " + e.what());
  }
  clip.video = Video(frames, height, width);
  char name[32];
  for (Index f = 0; f < frames; ++f) {
    std::snprintf(name, sizeof(name), "%05ld.png", static_cast<long>(f));
    const RgbImage img = read_png(dir / "frames" / name);
    if (img.height != height || img.width != width) throw IoError("frame size differs from meta.json in " + (dir / "frames" / name).string());
    const std::size_t off = clip.video.offset(f, 0, 0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) clip.video.pixels[off + i] = static_cast<float>(img.pixels[i]) / 255.0f;
  }
  if (fs::exists(dir / "tracks.jsonl")) {
    clip.tracks = read_tracks_jsonl(dir / "tracks.jsonl");
    for (const auto& t : clip.tracks) validate_track(t, frames);
  }
  return clip;
}

std::vector<fs::path> list_clip_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_tracks_jsonl(const fs::path& path, const std::vector<GroundTruthTrack>& tracks) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < tracks.size(); ++i) out << track_json(static_cast<long>(i), tracks[i]).dump() << '\n';
}

std::vector<GroundTruthTrack> read_tracks_jsonl(const fs::path& path) {
  std::vector<std::pair<long, GroundTruthTrack>> rows;
  for_each_line(path, [&](const nlohmann::json& j) {
    GroundTruthTrack t;
    t.positions = parse_xy(j.at("xy"));
    for (const auto& v : j.at("visible")) t.visible.push_back(v.get<bool>());
    require(t.positions.size() == t.visible.size(), path.string() + ": xy and visible lengths differ");
    rows.emplace_back(j.at("id").get<long>(), std::move(t));
  });
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<GroundTruthTrack> out;
  for (auto& r : rows) out.push_back(std::move(r.second));
  return out;
}

void write_predictions_jsonl(const fs::path& path, const std::vector<PredictionRecord>& records) {
  auto out = open_out(path);
  for (const auto& r : records) {
    nlohmann::json xy = nlohmann::json::array();
    for (const auto& p : r.track.positions) xy.push_back({p.x, p.y});
    nlohmann::json j = {{"id", r.id},
                        {"query", {r.query.frame, r.query.position.x, r.query.position.y}},
                        {"xy", xy},
                        {"vis", r.track.visibility},
                        {"conf", r.track.confidence}};
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRecord> read_predictions_jsonl(const fs::path& path) {
  std::vector<PredictionRecord> out;
  for_each_line(path, [&](const nlohmann::json& j) {
    PredictionRecord r;
    r.id = j.at("id").get<long>();
    const auto& q = j.at("query");
    require(q.is_array() && q.size() == 3, path.string() + ": query must be [t, x, y]");
    r.query.frame = q[0].get<Index>();
    r.query.position = {q[1].get<double>(), q[2].get<double>()};
    r.track.positions = parse_xy(j.at("xy"));
    if (j.contains("vis")) r.track.visibility = j.at("vis").get<std::vector<double>>();
    if (j.contains("conf")) r.track.confidence = j.at("conf").get<std::vector<double>>();
    for (double p : r.track.visibility) require(p >= 0.0 && p <= 1.0, path.string() + ": vis outside [0, 1]");
    require(r.track.visibility.empty() || r.track.visibility.size() == r.track.positions.size(),
            path.string() + ": vis and xy lengths differ");
    out.push_back(std::move(r));
  });
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void operator()(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

}  // namespace

std::string parameter_hash(const ParameterSet<float>& params, const std::string& prefix) {
  Fnv mix;
  for (const auto& e : params.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    mix(e.name.data(), e.name.size());
    mix(e.var.value().data(), static_cast<std::size_t>(e.var.size()) * sizeof(float));
  }
  return mix.hex();
}

std::string corpus_hash(const std::vector<SyntheticClip>& clips) {
  Fnv mix;
  for (const auto& c : clips) {
    const std::int64_t dims[3] = {c.video.frames, c.video.height, c.video.width};
    mix(dims, sizeof(dims));
    mix(c.video.pixels.data(), c.video.pixels.size() * sizeof(float));
    for (const auto& t : c.tracks) {
      for (const auto& p : t.positions) {
        mix(&p.x, sizeof(double));
        mix(&p.y, sizeof(double));
      }
      for (bool v : t.visible) {
        const unsigned char b = v ? 1 : 0;
        mix(&b, 1);
      }
    }
  }
  return mix.hex();
}

void save_checkpoint(const fs::path& dir, const ParameterSet<float>& params, const nlohmann::json& manifest) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "params.bin", std::ios::binary);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put<std::int64_t>(out, e.var.rows());
      put<std::int64_t>(out, e.var.cols());
      put<std::uint8_t>(out, e.trainable ? 1 : 0);
      const Matrix<float>& v = e.var.value();
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    if (!out) throw IoError("cannot write " + (dir / "params.bin").string());
  }
  nlohmann::json m = manifest;
  m["format_version"] = kCheckpointVersion;
  m["tensors"] = params.entries().size();
  write_json(dir / "manifest.json", m);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  ck.manifest = read_json(dir / "manifest.json");
  const fs::path path = dir / "params.bin";
  auto in = open_in(path, std::ios::binary);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = get<std::int64_t>(in, path);
    const auto cols = get<std::int64_t>(in, path);
    get<std::uint8_t>(in, path);
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 30)) throw IoError("corrupt tensor header in " + path.string());
    Matrix<float> m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint " + path.string());
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  return ck;
}

void load_parameters(ParameterSet<float>& params, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& e : params.entries()) {
    const bool wanted = e.name.rfind(prefix, 0) == 0;
    auto it = ckpt.tensors.find(e.name);
    if (it == ckpt.tensors.end()) {
      if (wanted) throw IoError("checkpoint lacks parameter " + e.name);
      continue;
    }
    if (it->second.rows() != e.var.rows() || it->second.cols() != e.var.cols())
      throw IoError("checkpoint shape mismatch for " + e.name);
    e.var.mutable_value() = it->second;
  }
}

}  // namespace ditracker
