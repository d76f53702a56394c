#include "ditracker/dit.hpp"

namespace ditracker {

void DiTConfig::validate() const {
  require(layers >= 1 && heads >= 1 && d_head >= 1, "DiTConfig: layers, heads and d_head must be positive");
  require(patch_stride >= 1 && max_frames >= 1 && lora_rank >= 1 && mlp_ratio >= 1, "DiTConfig: sizes must be positive");
  require(extract_layer >= 1 && extract_layer <= layers, "DiTConfig: extract_layer out of range");
  require(extract_head >= 0 && extract_head < heads, "DiTConfig: extract_head out of range");
  require(height >= 1 && width >= 1, "DiTConfig: resolution must be positive");
  require(height % patch_stride == 0 && width % patch_stride == 0, "DiTConfig: patch_stride must divide height and width");
}

nlohmann::json DiTConfig::to_json() const {
  return {{"layers", layers},       {"heads", heads},         {"d_head", d_head},
          {"patch_stride", patch_stride}, {"max_frames", max_frames}, {"lora_rank", lora_rank},
          {"extract_layer", extract_layer}, {"extract_head", extract_head}, {"mlp_ratio", mlp_ratio},
          {"height", height},       {"width", width}};
}

DiTConfig DiTConfig::from_json(const nlohmann::json& j) {
  DiTConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_head = j.value("d_head", c.d_head);
  c.patch_stride = j.value("patch_stride", c.patch_stride);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.extract_layer = j.value("extract_layer", c.extract_layer);
  c.extract_head = j.value("extract_head", c.extract_head);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.validate();
  return c;
}

std::vector<std::vector<Index>> chunk_plan(Index frames, Index chunk_len) {
  require(chunk_len >= 2, "chunk_plan: chunk_len must be at least 2");
  require(frames >= 1, "chunk_plan: frame count must be positive");
  std::vector<std::vector<Index>> plan;
  for (Index start = 0; start < frames; start += chunk_len) {
    std::vector<Index> chunk;
    if (start > 0) chunk.push_back(0);
    for (Index f = start; f < std::min(frames, start + chunk_len); ++f) chunk.push_back(f);
    plan.push_back(std::move(chunk));
  }
  return plan;
}

}  // namespace ditracker
