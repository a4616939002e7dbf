#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

// 8-bit RGB PNG codec. Pixel values are quantized as round(v·255).
std::vector<std::uint8_t> png_encode(const Image& image);
Image png_decode(const std::vector<std::uint8_t>& bytes);

void png_write(const Image& image, const std::filesystem::path& path);
Image png_read(const std::filesystem::path& path);

// Single-channel mask PNG; nonzero pixels are set.
void mask_png_write(const Mask& mask, const std::filesystem::path& path);
Mask mask_png_read(const std::filesystem::path& path);

// Round-trip through 8-bit quantization without touching disk.
Image quantize8(const Image& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace pairdiff
