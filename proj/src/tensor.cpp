#include "pairdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pairdiff/error.hpp"

namespace pairdiff {

std::size_t mask_area(const Mask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data().begin(), mask.data().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

bool mask_empty(const Mask& mask) {
  return std::none_of(mask.data().begin(), mask.data().end(),
                      [](std::uint8_t v) { return v != 0; });
}

Image::Image(Tensor3 t) : pixels(std::move(t)) { validate_image(*this); }

void validate_image(const Image& image) {
  const auto& p = image.pixels;
  if (p.channels != 3) {
    throw InvalidArgument("image must have 3 channels, got " + std::to_string(p.channels));
  }
  if (p.height < kMinImageSide || p.width < kMinImageSide) {
    throw InvalidArgument("image must be at least 8x8, got " + std::to_string(p.height) + "x" +
                          std::to_string(p.width));
  }
  if (p.values.size() != 3 * p.plane_size()) {
    throw InvalidArgument("image buffer size does not match its shape");
  }
  for (float v : p.values) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw InvalidArgument("image pixel outside [0,1]: " + std::to_string(v));
    }
  }
}

Image clamp_image(Tensor3 t) {
  for (float& v : t.values) {
    v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  }
  Image out;
  out.pixels = std::move(t);
  return out;
}

}  // namespace pairdiff
