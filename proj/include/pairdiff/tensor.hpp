#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pairdiff {

// Row-major 2-D grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int row, int col) { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const { return data_[index(row, col)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Grid& a, const Grid& b) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

// Binary mask; cells hold 0 or 1.
using Mask = Grid<std::uint8_t>;

std::size_t mask_area(const Mask& mask);
bool mask_empty(const Mask& mask);

// Channel-major (C×H×W) float tensor.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Tensor3() = default;
  Tensor3(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        values(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

  float& at(int c, int y, int x) {
    return values[static_cast<std::size_t>(c) * plane_size() +
                  static_cast<std::size_t>(y) * width + x];
  }
  float at(int c, int y, int x) const {
    return values[static_cast<std::size_t>(c) * plane_size() +
                  static_cast<std::size_t>(y) * width + x];
  }

  std::span<float> plane(int c) {
    return {values.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<const float> plane(int c) const {
    return {values.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }

  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const Tensor3& a, const Tensor3& b) = default;
};

// RGB image, 3×H×W with values in [0,1].
struct Image {
  Tensor3 pixels;

  Image() = default;
  Image(int height, int width, float fill = 0.0f) : pixels(3, height, width, fill) {}
  explicit Image(Tensor3 t);

  int height() const { return pixels.height; }
  int width() const { return pixels.width; }
  float at(int c, int y, int x) const { return pixels.at(c, y, x); }
  float& at(int c, int y, int x) { return pixels.at(c, y, x); }

  friend bool operator==(const Image& a, const Image& b) = default;
};

inline constexpr int kMinImageSide = 8;

// Throws InvalidArgument unless the image has 3 channels, H,W ≥ 8 and finite
// values in [0,1].
void validate_image(const Image& image);

// Clamp every pixel into [0,1].
Image clamp_image(Tensor3 t);

}  // namespace pairdiff
