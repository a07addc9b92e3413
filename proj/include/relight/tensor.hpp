#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "relight/image.hpp"

namespace relight {

/// Dense float32 tensor in NCHW layout. Vectors are stored as (n, c, 1, 1).
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  float& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  float at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  float* sample(int in) { return data.data() + static_cast<std::size_t>(in) * sample_size(); }
  const float* sample(int in) const { return data.data() + static_cast<std::size_t>(in) * sample_size(); }

  bool operator==(const Tensor&) const = default;
};

/// [0,1] interleaved image -> planar (1,3,h,w) tensor in [-1,1].
Tensor image_to_tensor(const ImageRgb& image);
/// Writes an interleaved image into sample `index` of a (n,3,h,w) tensor, mapped to [-1,1].
void write_image(Tensor& tensor, int index, const ImageRgb& image);
/// Sample `index` of a 3-channel tensor back to [0,1], clipped.
ImageRgb tensor_to_image(const Tensor& tensor, int index = 0);

}  // namespace relight
