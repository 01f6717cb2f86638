#include "ctt/gradcam.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "ctt/preprocess.hpp"

namespace ctt {

GradCamMap compute_cam(const Tensor& activations, const Tensor& gradients, int out_w, int out_h) {
  require(activations.shape.size() == 4 && activations.dim(0) == 1,
          "compute_cam: expected 1xCxHxW activations");
  require(activations.shape == gradients.shape, "compute_cam: gradient shape mismatch");
  const int C = activations.dim(1), H = activations.dim(2), W = activations.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  // alpha_k = spatial mean of d(logit)/dA_k
  std::vector<double> alpha(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    const float* gp = gradients.data.data() + static_cast<std::size_t>(c) * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
    alpha[static_cast<std::size_t>(c)] = acc / static_cast<double>(plane);
  }

  std::vector<float> raw(plane, 0.0f);
  float raw_max = 0.0f;
  for (std::size_t i = 0; i < plane; ++i) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c)
      acc += alpha[static_cast<std::size_t>(c)] *
             activations.data[static_cast<std::size_t>(c) * plane + i];
    raw[i] = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
    raw_max = std::max(raw_max, raw[i]);
  }
  // Pre-scale into [0,1] so the resampler's range holds, then upsample and
  // re-normalize: the map's maximum must be exactly 1 at input resolution.
  if (raw_max > 0.0f)
    for (float& v : raw) v /= raw_max;

  WindowedImage tmp;
  tmp.window = WindowName::Vascular;
  tmp.width = W;
  tmp.height = H;
  tmp.values = std::move(raw);
  const WindowedImage up = resize_bilinear(tmp, out_w, out_h);

  GradCamMap map;
  map.width = out_w;
  map.height = out_h;
  map.values = up.values;
  float up_max = 0.0f;
  for (float& v : map.values) {
    v = std::max(0.0f, v);
    up_max = std::max(up_max, v);
  }
  if (up_max > 0.0f)
    for (float& v : map.values) v /= up_max;
  return map;
}

std::vector<GradCamMap> grad_cam(CbamdrnModel& model, const std::vector<Tensor>& window_inputs,
                                 int class_idx, const std::string& layer_id) {
  const std::vector<WindowName> names = model.windows();
  const int n_stages = static_cast<int>(model.config.stage_channels.size());
  int stage_index = -1;
  if (layer_id == "final") {
    stage_index = n_stages - 1;
  } else if (layer_id.rfind("stage", 0) == 0) {
    try {
      stage_index = std::stoi(layer_id.substr(5)) - 1;
    } catch (const std::exception&) {
      stage_index = -1;
    }
  }
  if (stage_index < 0 || stage_index >= n_stages)
    throw ModelError(ModelError::Kind::UnknownLayer, "unknown Grad-CAM layer: " + layer_id);
  if (class_idx < 0 || class_idx >= model.config.num_classes)
    throw ModelError(ModelError::Kind::BadConfig,
                     "class index " + std::to_string(class_idx) + " out of range");

  Graph g;
  ClassifyTaps<float> taps = classify(g, model, window_inputs, ops::BnMode::Eval);
  require(g.value(taps.logits).dim(0) == 1, "grad_cam: expects a single sample");
  g.backward(g.select(taps.logits, static_cast<std::size_t>(class_idx)));

  std::vector<GradCamMap> maps;
  for (std::size_t w = 0; w < names.size(); ++w) {
    const Graph::Id layer = taps.per_window[w].stage_outputs[static_cast<std::size_t>(stage_index)];
    const Tensor& acts = g.value(layer);
    Tensor grads = g.grad_of(layer);
    if (grads.numel() == 0) grads = Tensor(acts.shape);  // logit independent of layer
    GradCamMap map = compute_cam(acts, grads, model.config.input_w, model.config.input_h);
    map.window = names[w];
    map.layer_id = "stage" + std::to_string(stage_index + 1);
    maps.push_back(std::move(map));
  }
  return maps;
}

RgbImage overlay(const GradCamMap& map, const WindowedImage& base) {
  require(map.width == base.width && map.height == base.height,
          "overlay: map/base size mismatch");
  RgbImage img;
  img.width = map.width;
  img.height = map.height;
  img.rgb.resize(static_cast<std::size_t>(map.width) * map.height * 3);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const float gray = std::clamp((base.values[i] + 1.0f) / 2.0f, 0.0f, 1.0f);
    const float red = std::clamp(gray + map.values[i], 0.0f, 1.0f);
    img.rgb[3 * i] = static_cast<std::uint8_t>(std::lround(red * 255.0f));
    img.rgb[3 * i + 1] = static_cast<std::uint8_t>(std::lround(gray * 255.0f));
    img.rgb[3 * i + 2] = static_cast<std::uint8_t>(std::lround(gray * 255.0f));
  }
  return img;
}

void write_map(const GradCamMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << map.width << ' ' << map.height << '\n';
  for (float v : map.values) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff),
                           static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
  }
}

Point2f center_of_mass(const GradCamMap& map) {
  double sum = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const double v = map.at(x, y);
      sum += v;
      sx += v * x;
      sy += v * y;
    }
  if (sum <= 0.0) return {static_cast<float>(map.width) / 2.0f,
                          static_cast<float>(map.height) / 2.0f};
  return {static_cast<float>(sx / sum), static_cast<float>(sy / sum)};
}

}  // namespace ctt
