#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ctt/dicom.hpp"

namespace ctt {

class PreprocessError : public std::runtime_error {
 public:
  enum class Kind { NoComponents, BadConfig };
  PreprocessError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class WindowName { Vascular, Mediastinum, Lung };

const char* window_name_str(WindowName w);

// An HU display window; pixels map linearly to [-1, +1] about the center.
struct WindowSpec {
  WindowName name;
  float hu_low;
  float hu_high;
};

// Table-driven defaults: vascular 0..650, mediastinum 40..400, lung -400..1500.
WindowSpec default_window(WindowName name);

struct WindowedImage {
  WindowName window;
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, in [-1, +1]

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Inclusive-exclusive pixel rectangle.
struct CropBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct BitMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}
  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

// A 4-connected foreground component, largest-first ordering downstream.
struct Component {
  std::vector<std::uint32_t> pixels;  // flat indices into the source mask
  CropBox bbox;
  long area = 0;
};

struct PreprocessConfig {
  int center_crop_w = 400;
  int center_crop_h = 400;
  int fixed_crop_w = 300;
  int fixed_crop_h = 180;
  float lung_threshold_hu = -400.0f;
  int bbox_margin_px = 10;
  int model_input_w = 224;
  int model_input_h = 224;
  WindowSpec vascular = default_window(WindowName::Vascular);
  WindowSpec mediastinum = default_window(WindowName::Mediastinum);
  WindowSpec lung = default_window(WindowName::Lung);

  const WindowSpec& window(WindowName name) const;
  void validate() const;
};

// Result of the dynamic cropping pipeline: original HU values inside the box.
struct DynamicCropResult {
  HuSlice cropped;
  CropBox box;
  bool used_fallback = false;
};

struct PreprocessedSlice {
  std::vector<WindowedImage> images;  // canonical order: vascular, mediastinum, lung
  CropBox box;                        // in center-cropped coordinates
  bool used_fallback = false;
};

// w x h region centered in img; shortfalls are padded with -1024 HU (air).
HuSlice center_crop(const HuSlice& img, int w, int h);

HuSlice fixed_crop(const HuSlice& img, const PreprocessConfig& cfg);

// v = clamp((hu - center) / half_range, -1, +1)
WindowedImage apply_window(const HuSlice& img, const WindowSpec& spec);

// Bit set where hu < threshold.
BitMask binarize_lung_mask(const HuSlice& img, float threshold_hu);

// Removes border-connected air by flood fill, labels the rest 4-connected,
// returns the two largest components (largest first; ties by scan order).
std::vector<Component> extract_lung_components(const BitMask& mask);

// Union of component boxes expanded by margin, clamped to bounds.
CropBox lung_bounding_box(const std::vector<Component>& components, int margin, int width,
                          int height);

// Binarize -> components -> bounding box -> crop original HU. Falls back to
// the fixed central crop when fewer than two components are found or the box
// covers less than 5% of the image.
DynamicCropResult dynamic_crop(const HuSlice& img, const PreprocessConfig& cfg);

// Corner-aligned bilinear resampling; output stays within [-1, +1].
WindowedImage resize_bilinear(const WindowedImage& img, int w, int h);

// Full pipeline: center crop, dynamic crop, per-window filter, resize. All
// requested windows share one crop box.
PreprocessedSlice preprocess_slice(const HuSlice& hu, const PreprocessConfig& cfg,
                                   const std::vector<WindowName>& windows);

}  // namespace ctt
