#pragma once

#include <string>
#include <vector>

#include "ctt/model.hpp"

namespace ctt {

// Class-evidence heat map for one window, resampled to model input size.
// Values are nonnegative and max-normalized (an identically-zero raw map
// stays zero).
struct GradCamMap {
  WindowName window = WindowName::Vascular;
  std::string layer_id;
  int width = 0;
  int height = 0;
  std::vector<float> values;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Core arithmetic, exposed for closed-form verification: weights are the
// spatial means of the gradient channels, the raw map is
// relu(sum_k alpha_k * A_k), normalized by its maximum and bilinearly
// upsampled to out_w x out_h. Expects single-sample 1xCxHxW tensors.
GradCamMap compute_cam(const Tensor& activations, const Tensor& gradients, int out_w, int out_h);

// Runs an eval-mode forward, backpropagates the chosen class logit, and
// builds one map per window from the named stage output ("stage1".."stageN"
// or "final"). Unknown names raise ModelError{UnknownLayer}.
std::vector<GradCamMap> grad_cam(CbamdrnModel& model, const std::vector<Tensor>& window_inputs,
                                 int class_idx, const std::string& layer_id = "final");

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// Base rendered as grayscale ((v + 1) / 2); heat added to the red channel,
// clamped per channel.
RgbImage overlay(const GradCamMap& map, const WindowedImage& base);

// Flat binary dump: one text line "width height", then raw little-endian
// 32-bit floats.
void write_map(const GradCamMap& map, const std::string& path);

// Weighted centroid of the map in its own pixel coordinates.
struct Point2f {
  float x = 0.0f;
  float y = 0.0f;
};
Point2f center_of_mass(const GradCamMap& map);

}  // namespace ctt
