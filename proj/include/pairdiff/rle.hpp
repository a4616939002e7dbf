#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

// Uncompressed COCO-style run-length encoding over row-major order. Runs
// alternate 0,1,0,… starting with a (possibly zero-length) run of zeros.
// The canonical empty mask is the single run {H·W}.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

Rle rle_encode(const Mask& mask);
Mask rle_decode(const Rle& rle);

// JSON form: {"size": [H, W], "counts": [...]}.
nlohmann::json rle_to_json(const Rle& rle);
Rle rle_from_json(const nlohmann::json& j);

}  // namespace pairdiff
