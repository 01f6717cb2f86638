#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctt {

// Minimal 8-bit RGB PNG writer (zlib-deflated, filter 0).
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

// Grayscale helper for [-1, 1] images: v -> (v + 1) / 2.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<float>& values);

}  // namespace ctt
