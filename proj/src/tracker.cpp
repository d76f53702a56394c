#include "ditracker/tracker.hpp"

namespace ditracker {

FusionMode parse_fusion(const std::string& name) {
  if (name == "none") return FusionMode::kNone;
  if (name == "feature_concat") return FusionMode::kFeatureConcat;
  if (name == "cost_sum") return FusionMode::kCostSum;
  if (name == "cost_concat") return FusionMode::kCostConcat;
  throw std::invalid_argument("unknown fusion mode: " + name);
}

std::string fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone:
      return "none";
    case FusionMode::kFeatureConcat:
      return "feature_concat";
    case FusionMode::kCostSum:
      return "cost_sum";
    case FusionMode::kCostConcat:
      return "cost_concat";
  }
  return "none";
}

void TrackerConfig::validate() const {
  dit.validate();
  pyramid.validate();
  require(pyramid.stride == dit.patch_stride, "TrackerConfig: pyramid stride must equal the DiT patch stride");
  require(dit.patch_stride == 4, "TrackerConfig: the conv backbone has a fixed total stride of 4");
  require(conv_channels >= 1 && embed_hidden >= 1, "TrackerConfig: widths must be positive");
  require(refiner.width >= 1 && refiner.heads >= 1 && refiner.width % refiner.heads == 0, "TrackerConfig: refiner width must split into heads");
  require(refiner.blocks >= 1 && refiner.fourier_bands >= 1 && refiner.embed_dim >= 1, "TrackerConfig: refiner sizes must be positive");
  require(iterations >= 1, "TrackerConfig: iterations must be positive");
  require(chunk_len >= 2, "TrackerConfig: chunk_len must be at least 2");
}

nlohmann::json TrackerConfig::to_json() const {
  return {{"dit", dit.to_json()},
          {"use_lora", use_lora},
          {"fusion", fusion_name(fusion)},
          {"num_scales", pyramid.num_scales},
          {"radius", pyramid.radius},
          {"conv_channels", conv_channels},
          {"embed_hidden", embed_hidden},
          {"embed_dim", refiner.embed_dim},
          {"refiner_width", refiner.width},
          {"refiner_heads", refiner.heads},
          {"refiner_blocks", refiner.blocks},
          {"fourier_bands", refiner.fourier_bands},
          {"iterations", iterations},
          {"chunk_len", chunk_len},
          {"detach_between_iterations", detach_between_iterations}};
}

TrackerConfig TrackerConfig::from_json(const nlohmann::json& j) {
  TrackerConfig c;
  if (j.contains("dit")) c.dit = DiTConfig::from_json(j.at("dit"));
  c.use_lora = j.value("use_lora", c.use_lora);
  if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  c.pyramid.num_scales = j.value("num_scales", c.pyramid.num_scales);
  c.pyramid.radius = j.value("radius", c.pyramid.radius);
  c.pyramid.stride = c.dit.patch_stride;
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.embed_hidden = j.value("embed_hidden", c.embed_hidden);
  c.refiner.embed_dim = j.value("embed_dim", c.refiner.embed_dim);
  c.refiner.width = j.value("refiner_width", c.refiner.width);
  c.refiner.heads = j.value("refiner_heads", c.refiner.heads);
  c.refiner.blocks = j.value("refiner_blocks", c.refiner.blocks);
  c.refiner.fourier_bands = j.value("fourier_bands", c.refiner.fourier_bands);
  c.iterations = j.value("iterations", c.iterations);
  c.chunk_len = j.value("chunk_len", c.chunk_len);
  c.detach_between_iterations = j.value("detach_between_iterations", c.detach_between_iterations);
  c.validate();
  return c;
}

}  // namespace ditracker
