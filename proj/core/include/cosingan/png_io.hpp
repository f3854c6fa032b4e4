#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cosingan/core.hpp"

namespace cosingan::io {

struct GrayPixels {
  Shape2 shape;
  std::vector<uint8_t> pixels;
};

GrayPixels read_gray_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, const GrayPixels& img);

/// Images are stored linearly mapped from [-1, 1] to [0, 255].
void save_image_png(const std::filesystem::path& path, const Image& img);
Image load_image_png(const std::filesystem::path& path);

/// Masks are stored with pixel values {0, 128, 255}.
void save_mask_png(const std::filesystem::path& path, const ConditionMask& mask);
ConditionMask load_mask_png(const std::filesystem::path& path);

/// Tiles images (already in [-1, 1]) into a grid with a 1-pixel gutter.
Image tile_grid(const std::vector<Image>& tiles, int64_t columns);

}  // namespace cosingan::io
