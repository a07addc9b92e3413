#include "relight/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "relight/error.hpp"

namespace relight {

float ImageRgb::max_value() const {
  if (pixels.empty()) return 0.0f;
  return *std::max_element(pixels.begin(), pixels.end());
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

ImageRgb8 quantize(const ImageRgb& image) {
  ImageRgb8 out{image.width, image.height, std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

ImageRgb to_float(const ImageRgb8& image) {
  ImageRgb out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) out.pixels[i] = image.pixels[i] / 255.0f;
  return out;
}

ImageRgb apply_mask(const ImageRgb& image, const Mask& mask) {
  if (mask.width != image.width || mask.height != image.height) {
    fail(ErrorCode::ShapeMismatch, "mask size does not match image");
  }
  ImageRgb out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (!mask.at(x, y)) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.0f;
      }
    }
  }
  return out;
}

namespace {

struct AxisWeights {
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

// Overlap of each output cell with the source cells along one axis,
// normalized so every output cell's weights sum to one.
AxisWeights area_weights(int src, int dst) {
  AxisWeights aw;
  aw.first.resize(dst);
  aw.weights.resize(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int o = 0; o < dst; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    const int i0 = static_cast<int>(std::floor(lo));
    const int i1 = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
    aw.first[o] = i0;
    double total = 0.0;
    for (int i = i0; i <= i1; ++i) {
      const double w = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      aw.weights[o].push_back(std::max(0.0, w));
      total += std::max(0.0, w);
    }
    for (double& w : aw.weights[o]) w /= total;
  }
  return aw;
}

}  // namespace

ImageRgb resize_area(const ImageRgb& image, int out_width, int out_height) {
  if (image.width == out_width && image.height == out_height) return image;
  const AxisWeights wx = area_weights(image.width, out_width);
  const AxisWeights wy = area_weights(image.height, out_height);

  // Horizontal pass into a double buffer, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(out_width) * image.height * 3, 0.0);
  for (int y = 0; y < image.height; ++y) {
    for (int ox = 0; ox < out_width; ++ox) {
      for (std::size_t k = 0; k < wx.weights[ox].size(); ++k) {
        const int sx = wx.first[ox] + static_cast<int>(k);
        for (int c = 0; c < 3; ++c) {
          tmp[(static_cast<std::size_t>(y) * out_width + ox) * 3 + c] += wx.weights[ox][k] * image.at(sx, y, c);
        }
      }
    }
  }
  ImageRgb out(out_width, out_height);
  for (int oy = 0; oy < out_height; ++oy) {
    for (int ox = 0; ox < out_width; ++ox) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < wy.weights[oy].size(); ++k) {
          const int sy = wy.first[oy] + static_cast<int>(k);
          acc += wy.weights[oy][k] * tmp[(static_cast<std::size_t>(sy) * out_width + ox) * 3 + c];
        }
        out.at(ox, oy, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                   const std::uint8_t* data) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoFailure, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoFailure, "libpng write failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, int& width, int& height,
                                       int wanted_channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    fail(ErrorCode::IoFailure, "cannot read png: " + path.string());
  }
  image.format = wanted_channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::IoFailure, "cannot decode png: " + path.string());
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return buffer;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageRgb8& image) {
  write_png_raw(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 3, image.pixels.data());
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values[i] ? 255 : 0;
  write_png_raw(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 1, bytes.data());
}

ImageRgb8 read_png_rgb(const std::filesystem::path& path) {
  ImageRgb8 out;
  out.pixels = read_png_raw(path, out.width, out.height, 3);
  return out;
}

Mask read_png_mask(const std::filesystem::path& path) {
  Mask out;
  std::vector<std::uint8_t> raw = read_png_raw(path, out.width, out.height, 1);
  out.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out.values[i] = raw[i] >= 128 ? 1 : 0;
  return out;
}

ImageRgb montage(const std::vector<ImageRgb>& tiles, int columns) {
  if (tiles.empty()) return {};
  const int tw = tiles.front().width;
  const int th = tiles.front().height;
  columns = std::max(1, std::min<int>(columns, static_cast<int>(tiles.size())));
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  ImageRgb out(tw * columns, th * rows);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].width != tw || tiles[i].height != th) fail(ErrorCode::ShapeMismatch, "montage tiles differ in size");
    const int ox = static_cast<int>(i % columns) * tw;
    const int oy = static_cast<int>(i / columns) * th;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c) out.at(ox + x, oy + y, c) = tiles[i].at(x, y, c);
  }
  return out;
}

}  // namespace relight
