#include "ctt/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace ctt {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
}

float parse_float(const std::string& key, const std::string& v) {
  try {
    return std::stof(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected comma-separated integers");
  return out;
}

// "WxH"
std::pair<int, int> parse_size(const std::string& key, const std::string& v) {
  const std::size_t x = v.find('x');
  if (x == std::string::npos) throw ConfigError(key + ": expected WxH, got '" + v + "'");
  return {parse_int(key, v.substr(0, x)), parse_int(key, v.substr(x + 1))};
}

// "low:high"
std::pair<float, float> parse_range(const std::string& key, const std::string& v) {
  const std::size_t c = v.find(':');
  if (c == std::string::npos) throw ConfigError(key + ": expected low:high, got '" + v + "'");
  return {parse_float(key, v.substr(0, c)), parse_float(key, v.substr(c + 1))};
}

void apply_kv_lines(const std::string& path,
                    const std::function<void(const std::string&, const std::string&)>& sink) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      sink(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
  if (key == "preprocess.center_crop") {
    std::tie(preprocess.center_crop_w, preprocess.center_crop_h) = parse_size(key, value);
  } else if (key == "preprocess.fixed_crop") {
    std::tie(preprocess.fixed_crop_w, preprocess.fixed_crop_h) = parse_size(key, value);
  } else if (key == "preprocess.lung_threshold_hu") {
    preprocess.lung_threshold_hu = parse_float(key, value);
  } else if (key == "preprocess.bbox_margin_px") {
    preprocess.bbox_margin_px = parse_int(key, value);
  } else if (key == "preprocess.model_input") {
    std::tie(preprocess.model_input_w, preprocess.model_input_h) = parse_size(key, value);
    model.input_w = preprocess.model_input_w;
    model.input_h = preprocess.model_input_h;
  } else if (key == "preprocess.vascular_window") {
    std::tie(preprocess.vascular.hu_low, preprocess.vascular.hu_high) = parse_range(key, value);
  } else if (key == "preprocess.mediastinum_window") {
    std::tie(preprocess.mediastinum.hu_low, preprocess.mediastinum.hu_high) =
        parse_range(key, value);
  } else if (key == "preprocess.lung_window") {
    std::tie(preprocess.lung.hu_low, preprocess.lung.hu_high) = parse_range(key, value);
  } else if (key == "model.stage_channels") {
    model.stage_channels = parse_int_list(key, value);
  } else if (key == "model.blocks_per_stage") {
    model.blocks_per_stage = parse_int_list(key, value);
  } else if (key == "model.stage_dilations") {
    model.stage_dilations = parse_int_list(key, value);
  } else if (key == "model.cbam_reduction") {
    model.cbam_reduction = parse_int(key, value);
  } else if (key == "model.spatial_kernel") {
    model.spatial_kernel = parse_int(key, value);
  } else if (key == "model.cbam_placement") {
    try {
      model.cbam_placement = parse_cbam_placement(value);
    } catch (const ModelError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  } else if (key == "model.preset") {
    if (value == "desk")
      model = ModelConfig{};
    else if (value == "drn50")
      model = drn50_preset();
    else
      throw ConfigError(key + ": expected desk or drn50, got '" + value + "'");
  } else if (key == "model.window_mode") {
    try {
      window_mode = parse_window_mode(value);
    } catch (const ModelError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  } else if (key == "train.epochs") {
    train.epochs = parse_int(key, value);
  } else if (key == "train.batch_size") {
    train.batch_size = parse_int(key, value);
  } else if (key == "train.lr") {
    train.lr = parse_float(key, value);
  } else if (key == "train.seed") {
    train.seed = static_cast<std::uint64_t>(std::stoull(value));
  } else if (key == "train.class_weighted") {
    train.class_weighted = parse_bool(key, value);
  } else if (key == "jobs") {
    jobs = parse_int(key, value);
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

void RunConfig::apply_file(const std::string& path) {
  apply_kv_lines(path, [this](const std::string& k, const std::string& v) { apply_kv(k, v); });
}

void RunConfig::validate() const {
  preprocess.validate();
  model.validate();
  if (train.epochs < 1 || train.batch_size < 1) throw ConfigError("train: epochs/batch >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

void save_model_config(const ModelConfig& cfg, WindowMode mode, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for write: " + path);
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    return s;
  };
  out << "stage_channels = " << list(cfg.stage_channels) << "\n";
  out << "blocks_per_stage = " << list(cfg.blocks_per_stage) << "\n";
  out << "stage_dilations = " << list(cfg.stage_dilations) << "\n";
  out << "cbam_reduction = " << cfg.cbam_reduction << "\n";
  out << "spatial_kernel = " << cfg.spatial_kernel << "\n";
  out << "num_classes = " << cfg.num_classes << "\n";
  out << "input_channels = " << cfg.input_channels << "\n";
  out << "input_size = " << cfg.input_w << "x" << cfg.input_h << "\n";
  out << "cbam_placement = " << cbam_placement_str(cfg.cbam_placement) << "\n";
  out << "window_mode = " << window_mode_str(mode) << "\n";
}

std::pair<ModelConfig, WindowMode> load_model_config(const std::string& path) {
  ModelConfig cfg;
  WindowMode mode = WindowMode::DWL;
  apply_kv_lines(path, [&](const std::string& key, const std::string& value) {
    if (key == "stage_channels")
      cfg.stage_channels = parse_int_list(key, value);
    else if (key == "blocks_per_stage")
      cfg.blocks_per_stage = parse_int_list(key, value);
    else if (key == "stage_dilations")
      cfg.stage_dilations = parse_int_list(key, value);
    else if (key == "cbam_reduction")
      cfg.cbam_reduction = parse_int(key, value);
    else if (key == "spatial_kernel")
      cfg.spatial_kernel = parse_int(key, value);
    else if (key == "num_classes")
      cfg.num_classes = parse_int(key, value);
    else if (key == "input_channels")
      cfg.input_channels = parse_int(key, value);
    else if (key == "input_size")
      std::tie(cfg.input_w, cfg.input_h) = parse_size(key, value);
    else if (key == "cbam_placement")
      cfg.cbam_placement = parse_cbam_placement(value);
    else if (key == "window_mode")
      mode = parse_window_mode(value);
    else
      throw ConfigError("unknown model config key: " + key);
  });
  cfg.validate();
  return {cfg, mode};
}

}  // namespace ctt
