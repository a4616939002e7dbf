#include "pairdiff/rle.hpp"

#include <numeric>

#include "pairdiff/error.hpp"

namespace pairdiff {

Rle rle_encode(const Mask& mask) {
  Rle rle{mask.height(), mask.width(), {}};
  std::uint32_t run = 0;
  std::uint8_t current = 0;
  for (std::uint8_t v : mask.data()) {
    const std::uint8_t bit = v != 0 ? 1 : 0;
    if (bit != current) {
      rle.counts.push_back(run);
      run = 0;
      current = bit;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

Mask rle_decode(const Rle& rle) {
  if (rle.height < 0 || rle.width < 0) throw InvalidArgument("rle: negative size");
  const std::uint64_t total = std::accumulate(rle.counts.begin(), rle.counts.end(), std::uint64_t{0});
  const auto expected = static_cast<std::uint64_t>(rle.height) * static_cast<std::uint64_t>(rle.width);
  if (total != expected) {
    throw InvalidArgument("rle: run lengths sum to " + std::to_string(total) + ", expected " +
                          std::to_string(expected));
  }
  Mask mask(rle.height, rle.width, 0);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : rle.counts) {
    for (std::uint32_t k = 0; k < run; ++k) mask[pos++] = value;
    value ^= 1;
  }
  return mask;
}

nlohmann::json rle_to_json(const Rle& rle) {
  return {{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

Rle rle_from_json(const nlohmann::json& j) {
  try {
    Rle rle;
    rle.height = j.at("size").at(0).get<int>();
    rle.width = j.at("size").at(1).get<int>();
    rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
    return rle;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("rle: malformed JSON: ") + e.what());
  }
}

}  // namespace pairdiff
