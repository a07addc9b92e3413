#include "relight/tensor.hpp"

#include <algorithm>

#include "relight/error.hpp"

namespace relight {

Tensor image_to_tensor(const ImageRgb& image) {
  Tensor t(1, 3, image.height, image.width);
  write_image(t, 0, image);
  return t;
}

void write_image(Tensor& tensor, int index, const ImageRgb& image) {
  if (tensor.c != 3 || tensor.h != image.height || tensor.w != image.width || index >= tensor.n) {
    fail(ErrorCode::ShapeMismatch, "image does not fit tensor slot");
  }
  float* dst = tensor.sample(index);
  const std::size_t plane = tensor.plane();
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * image.width + x;
      for (int c = 0; c < 3; ++c) dst[c * plane + p] = image.at(x, y, c) * 2.0f - 1.0f;
    }
  }
}

ImageRgb tensor_to_image(const Tensor& tensor, int index) {
  if (tensor.c != 3) fail(ErrorCode::ShapeMismatch, "tensor_to_image needs 3 channels");
  ImageRgb out(tensor.w, tensor.h);
  const float* src = tensor.sample(index);
  const std::size_t plane = tensor.plane();
  for (int y = 0; y < tensor.h; ++y) {
    for (int x = 0; x < tensor.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * tensor.w + x;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = std::clamp((src[c * plane + p] + 1.0f) * 0.5f, 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace relight
