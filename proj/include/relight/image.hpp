#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace relight {

/// Interleaved RGB float image, row-major, top row first.
struct ImageRgb {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  ImageRgb() = default;
  ImageRgb(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  float max_value() const;
  bool operator==(const ImageRgb&) const = default;
};

/// Single-channel boolean mask stored as bytes (0 or 1).
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// 8-bit interleaved RGB.
struct ImageRgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  bool operator==(const ImageRgb8&) const = default;
};

ImageRgb8 quantize(const ImageRgb& image);
ImageRgb to_float(const ImageRgb8& image);

/// Zeros every pixel where the mask is false.
ImageRgb apply_mask(const ImageRgb& image, const Mask& mask);

/// Box-filter area average to an arbitrary target size.
ImageRgb resize_area(const ImageRgb& image, int out_width, int out_height);

void write_png(const std::filesystem::path& path, const ImageRgb8& image);
void write_png(const std::filesystem::path& path, const Mask& mask);
ImageRgb8 read_png_rgb(const std::filesystem::path& path);
Mask read_png_mask(const std::filesystem::path& path);

/// Side-by-side montage of equally sized tiles, `columns` per row.
ImageRgb montage(const std::vector<ImageRgb>& tiles, int columns);

}  // namespace relight
