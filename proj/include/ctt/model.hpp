#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctt/graph.hpp"
#include "ctt/params.hpp"
#include "ctt/preprocess.hpp"

namespace ctt {

class ModelError : public std::runtime_error {
 public:
  enum class Kind { WindowSetMismatch, BadConfig, UnknownLayer };
  ModelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class CbamPlacement { None, PerStage, PerBlock };

const char* cbam_placement_str(CbamPlacement p);
CbamPlacement parse_cbam_placement(const std::string& s);

// Backbone and head hyperparameters. The desk default keeps the full
// architecture shape at ~1e5 parameters; drn50_preset mirrors the DRN-d-50
// bottleneck widths for full-scale runs.
struct ModelConfig {
  std::vector<int> stage_channels{16, 32, 64, 128};
  std::vector<int> blocks_per_stage{1, 1, 1, 1};
  std::vector<int> stage_dilations{1, 1, 2, 4};
  int cbam_reduction = 8;
  int spatial_kernel = 7;
  int num_classes = 2;
  int input_channels = 1;
  int input_w = 224;
  int input_h = 224;
  CbamPlacement cbam_placement = CbamPlacement::PerStage;

  void validate() const;
  int final_channels() const { return stage_channels.back(); }
};

ModelConfig drn50_preset();

enum class WindowMode { VWL, DWL, TWL };

const char* window_mode_str(WindowMode m);
WindowMode parse_window_mode(const std::string& s);

// VWL: vascular only. DWL: vascular + lung. TWL: all three windows in the
// canonical order vascular, mediastinum, lung.
std::vector<WindowName> windows_for_mode(WindowMode mode);

// One CBAMDRN backbone per window with independent weights, fused by a single
// linear layer over the concatenated global-average-pooled features.
template <class T>
struct CbamdrnModelT {
  ModelConfig config;
  WindowMode mode = WindowMode::DWL;
  ParamStoreT<T> params;

  std::vector<WindowName> windows() const { return windows_for_mode(mode); }
};

using CbamdrnModel = CbamdrnModelT<float>;

// Tapped intermediate results of one backbone pass, for Grad-CAM and tests.
template <class T>
struct BackboneTaps {
  std::vector<typename GraphT<T>::Id> stage_outputs;  // post-attention, per stage
  typename GraphT<T>::Id final_map = -1;
  typename GraphT<T>::Id pooled = -1;
};

template <class T>
struct ClassifyTaps {
  typename GraphT<T>::Id logits = -1;
  std::vector<BackboneTaps<T>> per_window;
};

namespace detail {

template <class T>
struct BnRef {
  ParameterT<T>* gamma;
  ParameterT<T>* beta;
  ParameterT<T>* running_mean;
  ParameterT<T>* running_var;
};

template <class T>
BnRef<T> bn_ref(ParamStoreT<T>& store, const std::string& prefix) {
  return {&store.get(prefix + ".gamma"), &store.get(prefix + ".beta"),
          &store.get(prefix + ".running_mean"), &store.get(prefix + ".running_var")};
}

template <class T>
typename GraphT<T>::Id apply_bn(GraphT<T>& g, typename GraphT<T>::Id x, BnRef<T> bn,
                                ops::BnMode mode) {
  return g.batch_norm(x, g.param(*bn.gamma), g.param(*bn.beta), bn.running_mean->value.data,
                      bn.running_var->value.data, T(0.1), T(1e-5), mode);
}

inline int bottleneck_mid(int out_channels) { return std::max(1, out_channels / 4); }

}  // namespace detail

// Registers every tensor of the model in deterministic order and applies
// He fan-in initialization (gamma = 1, beta = 0, biases = 0).
template <class T>
CbamdrnModelT<T> make_model(const ModelConfig& cfg, WindowMode mode, std::uint64_t seed);

// Mc = sigmoid(MLP(avg_pool(F)) + MLP(max_pool(F))); the two-layer MLP
// (C -> C/r -> C, relu between) is shared across the branches.
template <class T>
typename GraphT<T>::Id channel_attention(GraphT<T>& g, typename GraphT<T>::Id f,
                                         typename GraphT<T>::Id fc1, typename GraphT<T>::Id fc2) {
  const auto avg = g.global_pool(f, ops::PoolKind::Avg);
  const auto mx = g.global_pool(f, ops::PoolKind::Max);
  const auto b1 = g.linear(g.relu(g.linear(avg, fc1, std::nullopt)), fc2, std::nullopt);
  const auto b2 = g.linear(g.relu(g.linear(mx, fc1, std::nullopt)), fc2, std::nullopt);
  return g.sigmoid(g.add(b1, b2));
}

// Ms = sigmoid(conv_kxk(concat[channel_mean(F); channel_max(F)])), same-size.
template <class T>
typename GraphT<T>::Id spatial_attention(GraphT<T>& g, typename GraphT<T>::Id f,
                                         typename GraphT<T>::Id conv_w,
                                         typename GraphT<T>::Id conv_b, int kernel) {
  const auto cat = g.concat_channels(
      {g.channel_reduce(f, ops::ReduceKind::Mean), g.channel_reduce(f, ops::ReduceKind::Max)});
  ops::ConvSpec spec{1, kernel / 2, 1};
  return g.sigmoid(g.conv2d(cat, conv_w, conv_b, spec));
}

// F' = Mc(F) (x) F, F'' = Ms(F') (x) F'.
template <class T>
typename GraphT<T>::Id cbam_apply(GraphT<T>& g, typename GraphT<T>::Id f, ParamStoreT<T>& store,
                                  const std::string& prefix, int spatial_kernel) {
  const auto mc = channel_attention(g, f, g.param(store.get(prefix + ".channel.fc1.weight")),
                                    g.param(store.get(prefix + ".channel.fc2.weight")));
  const auto gated = g.mul_channel_gate(f, mc);
  const auto ms = spatial_attention(g, gated, g.param(store.get(prefix + ".spatial.conv.weight")),
                                    g.param(store.get(prefix + ".spatial.conv.bias")),
                                    spatial_kernel);
  return g.mul_spatial_gate(gated, ms);
}

// Bottleneck residual block: 1x1 / 3x3 (dilated, strided) / 1x1 with batch
// norm, projection shortcut when the shape changes, relu on the sum.
template <class T>
typename GraphT<T>::Id residual_block(GraphT<T>& g, typename GraphT<T>::Id x,
                                      ParamStoreT<T>& store, const std::string& prefix,
                                      int dilation, int stride, ops::BnMode bn_mode) {
  using detail::apply_bn;
  using detail::bn_ref;
  const int in_ch = g.value(x).dim(1);
  const int out_ch = store.get(prefix + ".conv3.weight").value.dim(0);

  auto h = g.conv2d(x, g.param(store.get(prefix + ".conv1.weight")), std::nullopt,
                    ops::ConvSpec{1, 0, 1});
  h = g.relu(apply_bn(g, h, bn_ref(store, prefix + ".bn1"), bn_mode));
  h = g.conv2d(h, g.param(store.get(prefix + ".conv2.weight")), std::nullopt,
               ops::ConvSpec{stride, dilation, dilation});
  h = g.relu(apply_bn(g, h, bn_ref(store, prefix + ".bn2"), bn_mode));
  h = g.conv2d(h, g.param(store.get(prefix + ".conv3.weight")), std::nullopt,
               ops::ConvSpec{1, 0, 1});
  h = apply_bn(g, h, bn_ref(store, prefix + ".bn3"), bn_mode);

  auto shortcut = x;
  if (in_ch != out_ch || stride != 1) {
    shortcut = g.conv2d(x, g.param(store.get(prefix + ".shortcut.conv.weight")), std::nullopt,
                        ops::ConvSpec{stride, 0, 1});
    shortcut = apply_bn(g, shortcut, bn_ref(store, prefix + ".shortcut.bn"), bn_mode);
  }
  return g.relu(g.add(h, shortcut));
}

// Stem (7x7 stride 2 + max pool stride 2) followed by the dilated stages.
// Stages with dilation > 1 keep stride 1, so the output stride is 8.
template <class T>
BackboneTaps<T> backbone_forward(GraphT<T>& g, typename GraphT<T>::Id x, ParamStoreT<T>& store,
                                 const ModelConfig& cfg, const std::string& window_prefix,
                                 ops::BnMode bn_mode) {
  using detail::apply_bn;
  using detail::bn_ref;
  BackboneTaps<T> taps;

  auto h = g.conv2d(x, g.param(store.get(window_prefix + ".stem.conv.weight")), std::nullopt,
                    ops::ConvSpec{2, 3, 1});
  h = g.relu(apply_bn(g, h, bn_ref(store, window_prefix + ".stem.bn"), bn_mode));
  h = g.max_pool2d(h, 3, 2, 1);

  for (std::size_t k = 0; k < cfg.stage_channels.size(); ++k) {
    const std::string stage = window_prefix + ".stage" + std::to_string(k + 1);
    const int dilation = cfg.stage_dilations[k];
    const int stage_stride = (k == 0 || dilation > 1) ? 1 : 2;
    for (int j = 0; j < cfg.blocks_per_stage[k]; ++j) {
      const std::string block = stage + ".block" + std::to_string(j);
      h = residual_block(g, h, store, block, dilation, j == 0 ? stage_stride : 1, bn_mode);
      if (cfg.cbam_placement == CbamPlacement::PerBlock)
        h = cbam_apply(g, h, store, block + ".cbam", cfg.spatial_kernel);
    }
    if (cfg.cbam_placement == CbamPlacement::PerStage)
      h = cbam_apply(g, h, store, stage + ".cbam", cfg.spatial_kernel);
    taps.stage_outputs.push_back(h);
  }

  taps.final_map = h;
  taps.pooled = g.global_pool(h, ops::PoolKind::Avg);
  return taps;
}

// One backbone per window, pooled features concatenated in window order and
// fused by a single linear layer into num_classes logits.
template <class T>
ClassifyTaps<T> classify(GraphT<T>& g, CbamdrnModelT<T>& model,
                         const std::vector<TensorT<T>>& window_inputs, ops::BnMode bn_mode) {
  const std::vector<WindowName> names = model.windows();
  if (window_inputs.size() != names.size())
    throw ModelError(ModelError::Kind::WindowSetMismatch,
                     std::string("expected ") + std::to_string(names.size()) + " windows for " +
                         window_mode_str(model.mode) + ", got " +
                         std::to_string(window_inputs.size()));

  ClassifyTaps<T> taps;
  std::vector<typename GraphT<T>::Id> pooled;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto x = g.constant(window_inputs[i]);
    auto bt = backbone_forward(g, x, model.params, model.config, window_name_str(names[i]),
                               bn_mode);
    pooled.push_back(bt.pooled);
    taps.per_window.push_back(std::move(bt));
  }
  const auto features = pooled.size() == 1 ? pooled[0] : g.concat_features(pooled);
  taps.logits = g.linear(features, g.param(model.params.get("fusion.weight")),
                         g.param(model.params.get("fusion.bias")));
  return taps;
}

// Argmax with ties resolved toward the positive class (index 1).
int predict_binary(const float* logits);

template <class T>
int predict_binary_t(const TensorT<T>& logits, int row) {
  const T* p = logits.data.data() + static_cast<std::size_t>(row) * logits.dim(1);
  return p[1] >= p[0] ? 1 : 0;
}

// Converts preprocessed window images into the model's N=1 input tensors.
template <class T>
std::vector<TensorT<T>> to_input_tensors(const std::vector<WindowedImage>& images) {
  std::vector<TensorT<T>> out;
  out.reserve(images.size());
  for (const WindowedImage& img : images) {
    TensorT<T> t({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.values.size(); ++i) t.data[i] = static_cast<T>(img.values[i]);
    out.push_back(std::move(t));
  }
  return out;
}

// ---- implementation ----

template <class T>
CbamdrnModelT<T> make_model(const ModelConfig& cfg, WindowMode mode, std::uint64_t seed) {
  cfg.validate();
  CbamdrnModelT<T> model;
  model.config = cfg;
  model.mode = mode;
  Rng rng(seed);

  auto add_conv = [&](const std::string& name, int out, int in, int kh, int kw) {
    auto& p = model.params.add(name, {out, in, kh, kw});
    init_he_normal(p.value, static_cast<std::size_t>(in) * kh * kw, rng);
  };
  auto add_bn = [&](const std::string& prefix, int ch) {
    auto& gamma = model.params.add(prefix + ".gamma", {ch});
    std::fill(gamma.value.data.begin(), gamma.value.data.end(), T(1));
    model.params.add(prefix + ".beta", {ch});
    model.params.add(prefix + ".running_mean", {ch}, false);
    auto& rv = model.params.add(prefix + ".running_var", {ch}, false);
    std::fill(rv.value.data.begin(), rv.value.data.end(), T(1));
  };
  auto add_cbam = [&](const std::string& prefix, int ch) {
    const int mid = ch / cfg.cbam_reduction;
    auto& fc1 = model.params.add(prefix + ".channel.fc1.weight", {ch, mid});
    init_he_normal(fc1.value, static_cast<std::size_t>(ch), rng);
    auto& fc2 = model.params.add(prefix + ".channel.fc2.weight", {mid, ch});
    init_he_normal(fc2.value, static_cast<std::size_t>(mid), rng);
    add_conv(prefix + ".spatial.conv.weight", 1, 2, cfg.spatial_kernel, cfg.spatial_kernel);
    model.params.add(prefix + ".spatial.conv.bias", {1});
  };

  for (WindowName w : windows_for_mode(mode)) {
    const std::string wp = window_name_str(w);
    add_conv(wp + ".stem.conv.weight", cfg.stage_channels[0], cfg.input_channels, 7, 7);
    add_bn(wp + ".stem.bn", cfg.stage_channels[0]);
    int in_ch = cfg.stage_channels[0];
    for (std::size_t k = 0; k < cfg.stage_channels.size(); ++k) {
      const std::string stage = wp + ".stage" + std::to_string(k + 1);
      const int out_ch = cfg.stage_channels[k];
      const int mid = detail::bottleneck_mid(out_ch);
      for (int j = 0; j < cfg.blocks_per_stage[k]; ++j) {
        const std::string block = stage + ".block" + std::to_string(j);
        const int block_in = j == 0 ? in_ch : out_ch;
        const int dilation = cfg.stage_dilations[k];
        const int stride = (j == 0 && k != 0 && dilation == 1) ? 2 : 1;
        add_conv(block + ".conv1.weight", mid, block_in, 1, 1);
        add_bn(block + ".bn1", mid);
        add_conv(block + ".conv2.weight", mid, mid, 3, 3);
        add_bn(block + ".bn2", mid);
        add_conv(block + ".conv3.weight", out_ch, mid, 1, 1);
        add_bn(block + ".bn3", out_ch);
        if (block_in != out_ch || stride != 1) {
          add_conv(block + ".shortcut.conv.weight", out_ch, block_in, 1, 1);
          add_bn(block + ".shortcut.bn", out_ch);
        }
        if (cfg.cbam_placement == CbamPlacement::PerBlock) add_cbam(block + ".cbam", out_ch);
      }
      if (cfg.cbam_placement == CbamPlacement::PerStage) add_cbam(stage + ".cbam", out_ch);
      in_ch = out_ch;
    }
  }

  const int fusion_in =
      cfg.final_channels() * static_cast<int>(windows_for_mode(mode).size());
  auto& fw = model.params.add("fusion.weight", {fusion_in, cfg.num_classes});
  init_he_normal(fw.value, static_cast<std::size_t>(fusion_in), rng);
  model.params.add("fusion.bias", {cfg.num_classes});
  return model;
}

}  // namespace ctt
