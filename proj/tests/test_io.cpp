#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ditracker/io.hpp"
#include "ditracker/pipeline.hpp"
#include "micro.hpp"

using namespace ditracker;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("ditracker_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("PNG round trip is lossless") {
  TempDir tmp("png");
  RgbImage img(5, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  write_png(tmp.path / "a.png", img);
  const RgbImage back = read_png(tmp.path / "a.png");
  CHECK(back.height == 5);
  CHECK(back.width == 7);
  CHECK(back.pixels == img.pixels);
  CHECK_THROWS_AS(read_png(tmp.path / "missing.png"), IoError);
}

TEST_CASE("clip directories round trip up to 8-bit quantization") {
  TempDir tmp("clip");
  const SyntheticClip clip = generate_clip(testing::micro_generator(4), 31);
  save_clip(tmp.path / "clip_00000", clip);
  const SyntheticClip back = load_clip(tmp.path / "clip_00000");
  CHECK(back.video.frames == 4);
  CHECK(back.video.height == 16);
  CHECK(back.video.width == 24);
  CHECK(back.seed == 31);
  float worst = 0.0f;
  for (std::size_t i = 0; i < clip.video.pixels.size(); ++i) worst = std::max(worst, std::abs(back.video.pixels[i] - clip.video.pixels[i]));
  CHECK(worst <= 0.5f / 255.0f + 1e-6f);
  REQUIRE(back.tracks.size() == clip.tracks.size());
  for (std::size_t i = 0; i < clip.tracks.size(); ++i) {
    CHECK(back.tracks[i].visible == clip.tracks[i].visible);
    for (std::size_t j = 0; j < clip.tracks[i].positions.size(); ++j) {
      CHECK(back.tracks[i].positions[j].x == clip.tracks[i].positions[j].x);
      CHECK(back.tracks[i].positions[j].y == clip.tracks[i].positions[j].y);
    }
  }
  const auto dirs = list_clip_dirs(tmp.path);
  REQUIRE(dirs.size() == 1);
  CHECK(dirs[0].filename() == "clip_00000");
}

TEST_CASE("prediction files round trip and reject bad visibility") {
  TempDir tmp("pred");
  PredictionRecord r;
  r.id = 3;
  r.query = {1, {2.5, 3.25}};
  r.track.positions = {{1.0, 2.0}, {2.125, 3.5}};
  r.track.visibility = {0.9, 0.1};
  r.track.confidence = {0.7, 0.2};
  write_predictions_jsonl(tmp.path / "p.jsonl", {r});
  const auto back = read_predictions_jsonl(tmp.path / "p.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == 3);
  CHECK(back[0].query.frame == 1);
  CHECK(back[0].query.position.y == 3.25);
  CHECK(back[0].track.positions[1].x == 2.125);
  CHECK(back[0].track.visibility == r.track.visibility);
  CHECK(back[0].track.confidence == r.track.confidence);

  std::ofstream(tmp.path / "bad.jsonl") << R"({"id": 0, "query": [0, 1, 1], "xy": [[1, 1]], "vis": [1.5], "conf": [0.5]})" << "\n";
  CHECK_THROWS(read_predictions_jsonl(tmp.path / "bad.jsonl"));
}

TEST_CASE("checkpoints round trip tensors and manifest") {
  TempDir tmp("ckpt");
  ParameterSet<float> params;
  Initializer init(4);
  params.add("a.weight", init.uniform<float>(3, 5, 1.0));
  params.add("b.bias", init.uniform<float>(1, 4, 1.0), false);
  save_checkpoint(tmp.path / "c", params, {{"kind", "test"}, {"seed", 4}});
  const Checkpoint ck = load_checkpoint(tmp.path / "c");
  CHECK(ck.manifest["kind"] == "test");
  CHECK(ck.manifest["format_version"] == kCheckpointVersion);
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors.at("a.weight") == params.get("a.weight").value());

  ParameterSet<float> other;
  Initializer init2(99);
  other.add("a.weight", init2.uniform<float>(3, 5, 1.0));
  other.add("b.bias", init2.uniform<float>(1, 4, 1.0));
  CHECK(parameter_hash(other) != parameter_hash(params));
  load_parameters(other, ck);
  CHECK(other.get("b.bias").value() == params.get("b.bias").value());
  CHECK(parameter_hash(other) == parameter_hash(params));

  ParameterSet<float> wrong;
  wrong.add("a.weight", Matrix<float>::Zero(5, 3));
  CHECK_THROWS_AS(load_parameters(wrong, ck), IoError);
  ParameterSet<float> extra;
  extra.add("c.weight", Matrix<float>::Zero(1, 1));
  CHECK_THROWS_AS(load_parameters(extra, ck), IoError);
  CHECK_NOTHROW(load_parameters(extra, ck, "a."));
}

TEST_CASE("corrupt checkpoints raise IoError") {
  TempDir tmp("corrupt");
  ParameterSet<float> params;
  params.add("w", Matrix<float>::Ones(4, 4));
  save_checkpoint(tmp.path / "c", params, {});
  const fs::path bin = tmp.path / "c" / "params.bin";
  fs::resize_file(bin, fs::file_size(bin) - 7);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "c"), IoError);
  std::ofstream(bin, std::ios::binary) << "garbage";
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "c"), IoError);
}

TEST_CASE("tracker checkpoints reproduce predictions exactly") {
  TempDir tmp("tracker");
  TrackerModel<float> model(testing::micro_tracker_config(), 41);
  model.prepare_adapters(42);
  for (auto& e : model.params().entries())
    if (e.name.find("lora_up") != std::string::npos) e.var.mutable_value().setConstant(0.01f);
  model.mark_pretrained_dit();
  save_tracker(tmp.path / "t", model, {{"seed", 41}});
  const auto loaded = load_tracker(tmp.path / "t");
  CHECK(loaded->has_pretrained_dit());
  CHECK(loaded->dit().has_lora());
  CHECK(parameter_hash(loaded->params()) == parameter_hash(model.params()));
  const SyntheticClip clip = generate_clip(testing::micro_generator(3), 43);
  const std::vector<TrackQuery> q{{0, {5.0, 5.0}}};
  const auto a = run_tracker(model, clip.video, q), b = run_tracker(*loaded, clip.video, q);
  CHECK(a[0].positions[2].x == b[0].positions[2].x);
  CHECK(a[0].visibility == b[0].visibility);
  CHECK_THROWS_AS(load_dit(tmp.path / "t"), PreconditionError);
  CHECK_THROWS_AS(load_tracker(tmp.path / "nothing"), PreconditionError);
}

TEST_CASE("corpus hash tracks content") {
  const auto a = generate_clip(testing::micro_generator(2), 1), b = generate_clip(testing::micro_generator(2), 2);
  CHECK(corpus_hash({a, b}) == corpus_hash({a, b}));
  CHECK(corpus_hash({a, b}) != corpus_hash({b, a}));
  CHECK(corpus_hash({a}).size() == 16);
}
