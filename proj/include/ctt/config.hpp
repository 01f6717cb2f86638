#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "ctt/model.hpp"
#include "ctt/preprocess.hpp"
#include "ctt/train.hpp"

namespace ctt {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Merged run settings. Precedence: built-in default < config file < explicit
// override (command-line flags call apply_kv last).
struct RunConfig {
  PreprocessConfig preprocess;
  ModelConfig model;
  WindowMode window_mode = WindowMode::DWL;
  TrainConfig train;
  int jobs = 1;

  // `key = value` lines, '#' comments. Unknown keys are rejected.
  void apply_file(const std::string& path);
  void apply_kv(const std::string& key, const std::string& value);
  void validate() const;
};

// Key/value description of a trained model's architecture, written beside
// its weight file.
void save_model_config(const ModelConfig& cfg, WindowMode mode, const std::string& path);
std::pair<ModelConfig, WindowMode> load_model_config(const std::string& path);

}  // namespace ctt
