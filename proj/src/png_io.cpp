#include "pairdiff/png_io.hpp"

#include <png.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "pairdiff/error.hpp"

namespace pairdiff {
namespace {

std::uint8_t to_byte(float v) {
  const float c = std::isfinite(v) ? std::min(std::max(v, 0.0f), 1.0f) : 0.0f;
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::vector<std::uint8_t> encode_raw(const std::vector<std::uint8_t>& raw, int height, int width,
                                     png_uint_32 format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> decode_raw(const std::vector<std::uint8_t>& bytes, png_uint_32 format,
                                     int& height, int& width) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw InvalidArgument(std::string("png decode failed: ") + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&img);
    throw InvalidArgument(std::string("png decode failed: ") + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return raw;
}

}  // namespace

std::vector<std::uint8_t> png_encode(const Image& image) {
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));
      }
    }
  }
  return encode_raw(raw, h, w, PNG_FORMAT_RGB);
}

Image png_decode(const std::vector<std::uint8_t>& bytes) {
  int h = 0;
  int w = 0;
  const auto raw = decode_raw(bytes, PNG_FORMAT_RGB, h, w);
  Image image(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = static_cast<float>(raw[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return image;
}

void png_write(const Image& image, const std::filesystem::path& path) {
  write_file_bytes(path, png_encode(image));
}

Image png_read(const std::filesystem::path& path) { return png_decode(read_file_bytes(path)); }

void mask_png_write(const Mask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> raw(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) raw[i] = mask[i] ? 255 : 0;
  write_file_bytes(path, encode_raw(raw, mask.height(), mask.width(), PNG_FORMAT_GRAY));
}

Mask mask_png_read(const std::filesystem::path& path) {
  int h = 0;
  int w = 0;
  const auto raw = decode_raw(read_file_bytes(path), PNG_FORMAT_GRAY, h, w);
  Mask mask(h, w, 0);
  for (std::size_t i = 0; i < raw.size(); ++i) mask[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

Image quantize8(const Image& image) {
  Image out = image;
  for (float& v : out.pixels.values) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace pairdiff
