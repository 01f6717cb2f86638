#include "ctt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ctt {

const char* window_name_str(WindowName w) {
  switch (w) {
    case WindowName::Vascular: return "vascular";
    case WindowName::Mediastinum: return "mediastinum";
    case WindowName::Lung: return "lung";
  }
  return "?";
}

WindowSpec default_window(WindowName name) {
  switch (name) {
    case WindowName::Vascular: return {name, 0.0f, 650.0f};
    case WindowName::Mediastinum: return {name, 40.0f, 400.0f};
    case WindowName::Lung: return {name, -400.0f, 1500.0f};
  }
  return {name, 0.0f, 1.0f};
}

const WindowSpec& PreprocessConfig::window(WindowName name) const {
  switch (name) {
    case WindowName::Vascular: return vascular;
    case WindowName::Mediastinum: return mediastinum;
    case WindowName::Lung: return lung;
  }
  return vascular;
}

void PreprocessConfig::validate() const {
  auto positive = [](int v) { return v > 0; };
  if (!positive(center_crop_w) || !positive(center_crop_h) || !positive(fixed_crop_w) ||
      !positive(fixed_crop_h) || !positive(model_input_w) || !positive(model_input_h))
    throw PreprocessError(PreprocessError::Kind::BadConfig, "crop/input sizes must be positive");
  if (bbox_margin_px < 0)
    throw PreprocessError(PreprocessError::Kind::BadConfig, "bbox margin must be >= 0");
  if (lung_threshold_hu < kHuMin || lung_threshold_hu > kHuMax)
    throw PreprocessError(PreprocessError::Kind::BadConfig, "lung threshold outside HU range");
  for (const WindowSpec* w : {&vascular, &mediastinum, &lung})
    if (!(w->hu_low < w->hu_high))
      throw PreprocessError(PreprocessError::Kind::BadConfig, "window must have hu_low < hu_high");
}

std::size_t BitMask::count() const {
  return static_cast<std::size_t>(std::accumulate(bits.begin(), bits.end(), 0L));
}

HuSlice center_crop(const HuSlice& img, int w, int h) {
  HuSlice out(w, h);
  std::fill(out.hu.begin(), out.hu.end(), kHuMin);
  // Truncating division gives floor((W-w)/2) when cropping and centers the
  // source when padding (offset is negative).
  const int off_x = (img.width - w) / 2;
  const int off_y = (img.height - h) / 2;
  for (int y = 0; y < h; ++y) {
    const int sy = y + off_y;
    if (sy < 0 || sy >= img.height) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x + off_x;
      if (sx < 0 || sx >= img.width) continue;
      out.at(x, y) = img.at(sx, sy);
    }
  }
  return out;
}

HuSlice fixed_crop(const HuSlice& img, const PreprocessConfig& cfg) {
  return center_crop(img, cfg.fixed_crop_w, cfg.fixed_crop_h);
}

WindowedImage apply_window(const HuSlice& img, const WindowSpec& spec) {
  WindowedImage out;
  out.window = spec.name;
  out.width = img.width;
  out.height = img.height;
  out.values.resize(img.hu.size());
  const float center = 0.5f * (spec.hu_low + spec.hu_high);
  const float half_range = 0.5f * (spec.hu_high - spec.hu_low);
  for (std::size_t i = 0; i < img.hu.size(); ++i)
    out.values[i] = std::clamp((img.hu[i] - center) / half_range, -1.0f, 1.0f);
  return out;
}

BitMask binarize_lung_mask(const HuSlice& img, float threshold_hu) {
  BitMask mask(img.width, img.height);
  for (std::size_t i = 0; i < img.hu.size(); ++i)
    mask.bits[i] = img.hu[i] < threshold_hu ? 1 : 0;
  return mask;
}

namespace {

// 4-connected flood fill over `state`, turning `from` into `to`.
void flood(std::vector<std::uint8_t>& state, int width, int height, std::uint32_t seed,
           std::uint8_t from, std::uint8_t to, std::vector<std::uint32_t>* visited) {
  std::vector<std::uint32_t> stack{seed};
  state[seed] = to;
  while (!stack.empty()) {
    const std::uint32_t p = stack.back();
    stack.pop_back();
    if (visited) visited->push_back(p);
    const int x = static_cast<int>(p % static_cast<std::uint32_t>(width));
    const int y = static_cast<int>(p / static_cast<std::uint32_t>(width));
    const int nx[4] = {x - 1, x + 1, x, x};
    const int ny[4] = {y, y, y - 1, y + 1};
    for (int k = 0; k < 4; ++k) {
      if (nx[k] < 0 || nx[k] >= width || ny[k] < 0 || ny[k] >= height) continue;
      const std::uint32_t q =
          static_cast<std::uint32_t>(ny[k]) * static_cast<std::uint32_t>(width) +
          static_cast<std::uint32_t>(nx[k]);
      if (state[q] == from) {
        state[q] = to;
        stack.push_back(q);
      }
    }
  }
}

}  // namespace

std::vector<Component> extract_lung_components(const BitMask& mask) {
  const int w = mask.width, h = mask.height;
  // state: 0 background, 1 foreground, 2 border-connected air, 3 labeled
  std::vector<std::uint8_t> state = mask.bits;
  for (int x = 0; x < w; ++x) {
    for (int y : {0, h - 1}) {
      const std::uint32_t p = static_cast<std::uint32_t>(y) * w + static_cast<std::uint32_t>(x);
      if (state[p] == 1) flood(state, w, h, p, 1, 2, nullptr);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x : {0, w - 1}) {
      const std::uint32_t p = static_cast<std::uint32_t>(y) * w + static_cast<std::uint32_t>(x);
      if (state[p] == 1) flood(state, w, h, p, 1, 2, nullptr);
    }
  }

  std::vector<Component> components;
  for (std::uint32_t p = 0; p < state.size(); ++p) {
    if (state[p] != 1) continue;
    Component c;
    flood(state, w, h, p, 1, 3, &c.pixels);
    c.area = static_cast<long>(c.pixels.size());
    int x0 = w, y0 = h, x1 = 0, y1 = 0;
    for (std::uint32_t q : c.pixels) {
      const int x = static_cast<int>(q % static_cast<std::uint32_t>(w));
      const int y = static_cast<int>(q / static_cast<std::uint32_t>(w));
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
    }
    c.bbox = CropBox{x0, y0, x1, y1};
    components.push_back(std::move(c));
  }
  // Largest two, largest first; scan order breaks ties deterministically.
  std::stable_sort(components.begin(), components.end(),
                   [](const Component& a, const Component& b) { return a.area > b.area; });
  if (components.size() > 2) components.resize(2);
  return components;
}

CropBox lung_bounding_box(const std::vector<Component>& components, int margin, int width,
                          int height) {
  if (components.empty())
    throw PreprocessError(PreprocessError::Kind::NoComponents, "no lung components");
  CropBox box = components.front().bbox;
  for (const Component& c : components) {
    box.x0 = std::min(box.x0, c.bbox.x0);
    box.y0 = std::min(box.y0, c.bbox.y0);
    box.x1 = std::max(box.x1, c.bbox.x1);
    box.y1 = std::max(box.y1, c.bbox.y1);
  }
  box.x0 = std::max(0, box.x0 - margin);
  box.y0 = std::max(0, box.y0 - margin);
  box.x1 = std::min(width, box.x1 + margin);
  box.y1 = std::min(height, box.y1 + margin);
  return box;
}

namespace {

HuSlice crop_to_box(const HuSlice& img, const CropBox& box) {
  HuSlice out(box.width(), box.height());
  for (int y = 0; y < box.height(); ++y)
    for (int x = 0; x < box.width(); ++x) out.at(x, y) = img.at(box.x0 + x, box.y0 + y);
  return out;
}

CropBox central_box(int img_w, int img_h, int w, int h) {
  const int x0 = std::max(0, (img_w - w) / 2);
  const int y0 = std::max(0, (img_h - h) / 2);
  return CropBox{x0, y0, std::min(img_w, x0 + w), std::min(img_h, y0 + h)};
}

}  // namespace

DynamicCropResult dynamic_crop(const HuSlice& img, const PreprocessConfig& cfg) {
  const BitMask mask = binarize_lung_mask(img, cfg.lung_threshold_hu);
  const std::vector<Component> components = extract_lung_components(mask);

  DynamicCropResult result;
  if (components.size() >= 2) {
    const CropBox box =
        lung_bounding_box(components, cfg.bbox_margin_px, img.width, img.height);
    const long min_area =
        static_cast<long>(0.05 * static_cast<double>(img.width) * img.height);
    if (box.area() >= min_area) {
      result.box = box;
      result.cropped = crop_to_box(img, box);  // original HU filled back
      result.used_fallback = false;
      return result;
    }
  }
  result.used_fallback = true;
  result.box = central_box(img.width, img.height, cfg.fixed_crop_w, cfg.fixed_crop_h);
  result.cropped = fixed_crop(img, cfg);
  return result;
}

WindowedImage resize_bilinear(const WindowedImage& img, int w, int h) {
  WindowedImage out;
  out.window = img.window;
  out.width = w;
  out.height = h;
  out.values.resize(static_cast<std::size_t>(w) * h);
  const double sx = w > 1 ? static_cast<double>(img.width - 1) / (w - 1) : 0.0;
  const double sy = h > 1 ? static_cast<double>(img.height - 1) / (h - 1) : 0.0;
  const double cx = w > 1 ? 0.0 : (img.width - 1) / 2.0;
  const double cy = h > 1 ? 0.0 : (img.height - 1) / 2.0;
  for (int y = 0; y < h; ++y) {
    const double fy = cy + y * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = cx + x * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double v = (1.0 - wy) * ((1.0 - wx) * img.at(x0, y0) + wx * img.at(x1, y0)) +
                       wy * ((1.0 - wx) * img.at(x0, y1) + wx * img.at(x1, y1));
      out.values[static_cast<std::size_t>(y) * w + x] =
          std::clamp(static_cast<float>(v), -1.0f, 1.0f);
    }
  }
  return out;
}

PreprocessedSlice preprocess_slice(const HuSlice& hu, const PreprocessConfig& cfg,
                                   const std::vector<WindowName>& windows) {
  const HuSlice centered = center_crop(hu, cfg.center_crop_w, cfg.center_crop_h);
  DynamicCropResult crop = dynamic_crop(centered, cfg);

  PreprocessedSlice out;
  out.box = crop.box;
  out.used_fallback = crop.used_fallback;
  for (WindowName name : {WindowName::Vascular, WindowName::Mediastinum, WindowName::Lung}) {
    if (std::find(windows.begin(), windows.end(), name) == windows.end()) continue;
    WindowedImage filtered = apply_window(crop.cropped, cfg.window(name));
    out.images.push_back(resize_bilinear(filtered, cfg.model_input_w, cfg.model_input_h));
  }
  return out;
}

}  // namespace ctt
