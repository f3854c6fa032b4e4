#include "cosingan/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace cosingan::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::string& what, const std::filesystem::path& path) {
  throw ValidationError(what + ": " + path.string());
}

}  // namespace

GrayPixels read_gray_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) png_fail("cannot open PNG", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) png_fail("png_create_read_struct failed", path);
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    png_fail("png_create_info_struct failed", path);
  }

  GrayPixels out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail("malformed PNG", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if ((color & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.shape = {static_cast<int64_t>(png_get_image_height(png, info)), static_cast<int64_t>(png_get_image_width(png, info))};
  if (png_get_rowbytes(png, info) != static_cast<size_t>(out.shape.width)) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail("unsupported PNG layout", path);
  }
  out.pixels.resize(static_cast<size_t>(out.shape.area()));
  rows.resize(static_cast<size_t>(out.shape.height));
  for (int64_t r = 0; r < out.shape.height; ++r) rows[static_cast<size_t>(r)] = out.pixels.data() + r * out.shape.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_gray_png(const std::filesystem::path& path, const GrayPixels& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) png_fail("cannot write PNG", tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) png_fail("png_create_write_struct failed", path);
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
      png_destroy_write_struct(&png, nullptr);
      png_fail("png_create_info_struct failed", path);
    }
    std::vector<png_bytep> rows(static_cast<size_t>(img.shape.height));
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      png_fail("PNG encode failed", path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.shape.width), static_cast<png_uint_32>(img.shape.height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t r = 0; r < img.shape.height; ++r) {
      rows[static_cast<size_t>(r)] = const_cast<png_bytep>(img.pixels.data() + r * img.shape.width);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

void save_image_png(const std::filesystem::path& path, const Image& img) {
  GrayPixels out{img.shape(), std::vector<uint8_t>(img.data().size())};
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.data()[i]), -1.0, 1.0);
    out.pixels[i] = static_cast<uint8_t>(std::lround((v + 1.0) * 127.5));
  }
  write_gray_png(path, out);
}

Image load_image_png(const std::filesystem::path& path) {
  const GrayPixels px = read_gray_png(path);
  std::vector<float> data(px.pixels.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(px.pixels[i] / 127.5 - 1.0);
  return Image(px.shape, std::move(data));
}

void save_mask_png(const std::filesystem::path& path, const ConditionMask& mask) {
  GrayPixels out{mask.shape(), std::vector<uint8_t>(mask.labels().size())};
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<uint8_t>(kCanonicalPixelValues[mask.labels()[i]]);
  }
  write_gray_png(path, out);
}

ConditionMask load_mask_png(const std::filesystem::path& path) {
  const GrayPixels px = read_gray_png(path);
  std::vector<uint8_t> labels(px.pixels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    const uint8_t v = px.pixels[i];
    labels[i] = v < 64 ? 0 : (v < 192 ? 1 : 2);
  }
  return ConditionMask(px.shape, std::move(labels));
}

Image tile_grid(const std::vector<Image>& tiles, int64_t columns) {
  if (tiles.empty()) throw ValidationError("tile_grid needs at least one tile");
  const Shape2 tile = tiles.front().shape();
  columns = std::max<int64_t>(1, std::min<int64_t>(columns, static_cast<int64_t>(tiles.size())));
  const int64_t rows = (static_cast<int64_t>(tiles.size()) + columns - 1) / columns;
  Image grid({rows * (tile.height + 1) - 1, columns * (tile.width + 1) - 1}, -1.0F);
  for (size_t k = 0; k < tiles.size(); ++k) {
    const Image t = resize_image(tiles[k], tile);
    const int64_t r0 = static_cast<int64_t>(k) / columns * (tile.height + 1);
    const int64_t c0 = static_cast<int64_t>(k) % columns * (tile.width + 1);
    for (int64_t r = 0; r < tile.height; ++r) {
      for (int64_t c = 0; c < tile.width; ++c) grid.at(r0 + r, c0 + c) = t.at(r, c);
    }
  }
  return grid;
}

}  // namespace cosingan::io
