#include "ctt/model.hpp"

namespace ctt {

const char* cbam_placement_str(CbamPlacement p) {
  switch (p) {
    case CbamPlacement::None: return "none";
    case CbamPlacement::PerStage: return "per_stage";
    case CbamPlacement::PerBlock: return "per_block";
  }
  return "?";
}

CbamPlacement parse_cbam_placement(const std::string& s) {
  if (s == "none") return CbamPlacement::None;
  if (s == "per_stage") return CbamPlacement::PerStage;
  if (s == "per_block") return CbamPlacement::PerBlock;
  throw ModelError(ModelError::Kind::BadConfig, "unknown cbam placement: " + s);
}

void ModelConfig::validate() const {
  if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size() ||
      stage_channels.size() != stage_dilations.size())
    throw ModelError(ModelError::Kind::BadConfig,
                     "stage_channels, blocks_per_stage, stage_dilations must share length");
  for (int c : stage_channels)
    if (c < 1) throw ModelError(ModelError::Kind::BadConfig, "stage width must be >= 1");
  for (int b : blocks_per_stage)
    if (b < 1) throw ModelError(ModelError::Kind::BadConfig, "blocks per stage must be >= 1");
  for (int d : stage_dilations)
    if (d < 1) throw ModelError(ModelError::Kind::BadConfig, "dilation must be >= 1");
  if (cbam_reduction < 1)
    throw ModelError(ModelError::Kind::BadConfig, "cbam reduction must be >= 1");
  if (cbam_placement != CbamPlacement::None)
    for (int c : stage_channels)
      if (c % cbam_reduction != 0)
        throw ModelError(ModelError::Kind::BadConfig,
                         "cbam reduction must divide every stage width");
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
    throw ModelError(ModelError::Kind::BadConfig, "spatial kernel must be odd");
  if (num_classes < 2) throw ModelError(ModelError::Kind::BadConfig, "need >= 2 classes");
  if (input_channels != 1)
    throw ModelError(ModelError::Kind::BadConfig, "one input channel per window");
  if (input_w < 32 || input_h < 32)
    throw ModelError(ModelError::Kind::BadConfig, "input size too small for the stem");
}

ModelConfig drn50_preset() {
  ModelConfig cfg;
  cfg.stage_channels = {256, 512, 1024, 2048};
  cfg.blocks_per_stage = {3, 4, 6, 3};
  cfg.stage_dilations = {1, 1, 2, 4};
  cfg.cbam_reduction = 16;
  return cfg;
}

const char* window_mode_str(WindowMode m) {
  switch (m) {
    case WindowMode::VWL: return "VWL";
    case WindowMode::DWL: return "DWL";
    case WindowMode::TWL: return "TWL";
  }
  return "?";
}

WindowMode parse_window_mode(const std::string& s) {
  if (s == "VWL") return WindowMode::VWL;
  if (s == "DWL") return WindowMode::DWL;
  if (s == "TWL" || s == "MWL") return WindowMode::TWL;
  throw ModelError(ModelError::Kind::BadConfig, "unknown window mode: " + s);
}

std::vector<WindowName> windows_for_mode(WindowMode mode) {
  switch (mode) {
    case WindowMode::VWL: return {WindowName::Vascular};
    case WindowMode::DWL: return {WindowName::Vascular, WindowName::Lung};
    case WindowMode::TWL:
      return {WindowName::Vascular, WindowName::Mediastinum, WindowName::Lung};
  }
  return {};
}

int predict_binary(const float* logits) { return logits[1] >= logits[0] ? 1 : 0; }

}  // namespace ctt
