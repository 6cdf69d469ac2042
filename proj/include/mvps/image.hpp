#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "mvps/common.hpp"

namespace mvps {

// Planar-interleaved image of doubles, row-major, origin top-left.
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<double> px;

  Image() = default;
  Image(int w, int h, int c = 1) : width(w), height(h), channels(c), px(size_t(w) * h * c, 0.0) {}

  double& at(int x, int y, int c = 0) { return px[(size_t(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const { return px[(size_t(y) * width + x) * channels + c]; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  size_t size() const { return px.size(); }

  // Bilinear sample at continuous coordinates; pixel (x,y) is the sample at
  // exactly (x,y). Out-of-range coordinates clamp to the border.
  double bilinear(double x, double y, int c = 0) const {
    x = std::min(std::max(x, 0.0), double(width - 1));
    y = std::min(std::max(y, 0.0), double(height - 1));
    int x0 = int(x), y0 = int(y);
    int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    double fx = x - x0, fy = y - y0;
    return at(x0, y0, c) * (1 - fx) * (1 - fy) + at(x1, y0, c) * fx * (1 - fy) +
           at(x0, y1, c) * (1 - fx) * fy + at(x1, y1, c) * fx * fy;
  }
};

// ---------------------------------------------------------------------------
// PFM: float32 maps (1 or 3 channels), little-endian, bottom-up rows.
// Used for depth / normal / variance / confidence maps.
// ---------------------------------------------------------------------------

inline void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ContractError("write_pfm: only 1 or 3 channels supported");
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("write_pfm: cannot open " + path);
  std::fprintf(f, "%s\n%d %d\n-1.0\n", img.channels == 1 ? "Pf" : "PF", img.width, img.height);
  std::vector<float> row(size_t(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[size_t(x) * img.channels + c] = float(img.at(x, y, c));
    if (std::fwrite(row.data(), sizeof(float), row.size(), f) != row.size()) {
      std::fclose(f);
      throw IoError("write_pfm: short write to " + path);
    }
  }
  std::fclose(f);
}

inline Image read_pfm(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("read_pfm: cannot open " + path);
  char tag[3] = {0};
  int w = 0, h = 0;
  double scale = 0;
  if (std::fscanf(f, "%2s %d %d %lf", tag, &w, &h, &scale) != 4 || w <= 0 || h <= 0) {
    std::fclose(f);
    throw IoError("read_pfm: bad header in " + path);
  }
  std::fgetc(f);  // single whitespace after the scale line
  int channels = std::strcmp(tag, "PF") == 0 ? 3 : 1;
  if (channels == 1 && std::strcmp(tag, "Pf") != 0) {
    std::fclose(f);
    throw IoError("read_pfm: unknown tag in " + path);
  }
  if (scale > 0) {
    std::fclose(f);
    throw IoError("read_pfm: big-endian data not supported in " + path);
  }
  Image img(w, h, channels);
  std::vector<float> row(size_t(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    if (std::fread(row.data(), sizeof(float), row.size(), f) != row.size()) {
      std::fclose(f);
      throw IoError("read_pfm: truncated data in " + path);
    }
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) img.at(x, y, c) = row[size_t(x) * channels + c];
  }
  std::fclose(f);
  return img;
}

// ---------------------------------------------------------------------------
// PNG: 16-bit grayscale radiance images with a "scale" text chunk so linear
// intensities above 1 survive the round trip (value = code/65535 * scale),
// and 8-bit masks.
// ---------------------------------------------------------------------------

namespace detail {

struct PngCloser {
  FILE* f = nullptr;
  ~PngCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

inline void write_png16(const std::string& path, const Image& img, double scale) {
  if (img.channels != 1) throw ContractError("write_png16: grayscale only");
  if (scale <= 0) throw ContractError("write_png16: scale must be positive");
  detail::PngCloser fc{std::fopen(path.c_str(), "wb")};
  if (!fc.f) throw IoError("write_png16: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png16: libpng failure on " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  char key[] = "scale";
  char text[64];
  std::snprintf(text, sizeof(text), "%.17g", scale);
  png_text chunk{};
  chunk.compression = PNG_TEXT_COMPRESSION_NONE;
  chunk.key = key;
  chunk.text = text;
  chunk.text_length = std::strlen(text);
  png_set_text(png, info, &chunk, 1);
  png_write_info(png, info);
  png_set_swap(png);  // rows below are host (little) endian
  std::vector<uint16_t> row(static_cast<size_t>(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = img.at(x, y) / scale;
      v = std::min(std::max(v, 0.0), 1.0);
      row[size_t(x)] = uint16_t(std::lround(v * 65535.0));
    }
    png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads a 16-bit radiance image; returns intensities rescaled by the stored
// scale chunk (missing chunk means scale 1).
inline Image read_png16(const std::string& path, double* scale_out = nullptr) {
  detail::PngCloser fc{std::fopen(path.c_str(), "rb")};
  if (!fc.f) throw IoError("read_png16: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png16: libpng failure on " + path);
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
      png_get_bit_depth(png, info) != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png16: " + path + " is not 16-bit grayscale");
  }
  double scale = 1.0;
  png_textp texts = nullptr;
  int num_text = 0;
  if (png_get_text(png, info, &texts, &num_text) > 0)
    for (int i = 0; i < num_text; ++i)
      if (std::strcmp(texts[i].key, "scale") == 0) scale = std::strtod(texts[i].text, nullptr);
  png_set_swap(png);
  int w = int(png_get_image_width(png, info));
  int h = int(png_get_image_height(png, info));
  Image img(w, h, 1);
  std::vector<uint16_t> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, reinterpret_cast<png_bytep>(row.data()), nullptr);
    for (int x = 0; x < w; ++x) img.at(x, y) = double(row[size_t(x)]) / 65535.0 * scale;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (scale_out) *scale_out = scale;
  return img;
}

// Binary mask: nonzero pixels are inside.
inline void write_mask_png(const std::string& path, const Image& mask) {
  if (mask.channels != 1) throw ContractError("write_mask_png: grayscale only");
  detail::PngCloser fc{std::fopen(path.c_str(), "wb")};
  if (!fc.f) throw IoError("write_mask_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_mask_png: libpng failure on " + path);
  }
  png_init_io(png, fc.f);
  png_set_IHDR(png, info, png_uint_32(mask.width), png_uint_32(mask.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(mask.width));
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) row[size_t(x)] = mask.at(x, y) > 0.5 ? 255 : 0;
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image read_mask_png(const std::string& path) {
  detail::PngCloser fc{std::fopen(path.c_str(), "rb")};
  if (!fc.f) throw IoError("read_mask_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_mask_png: libpng failure on " + path);
  }
  png_init_io(png, fc.f);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_rgb_to_gray(png, 1, -1, -1);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  int w = int(png_get_image_width(png, info));
  int h = int(png_get_image_height(png, info));
  Image img(w, h, 1);
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) img.at(x, y) = row[size_t(x)] > 127 ? 1.0 : 0.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace mvps
