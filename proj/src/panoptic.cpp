#include "pairdiff/panoptic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pairdiff/error.hpp"
#include "pairdiff/png_io.hpp"
#include "pairdiff/rle.hpp"

namespace pairdiff {

int PanopticMap::num_instances() const {
  if (instance.size() == 0) return 0;
  return *std::max_element(instance.data().begin(), instance.data().end()) + 1;
}

void validate_partition(const PanopticMap& map) {
  if (!map.category.same_shape(map.instance)) {
    throw PartitionViolation("category and instance grids differ in shape");
  }
  if (map.instance.size() == 0) throw PartitionViolation("empty panoptic map");
  const int n = map.num_instances();
  std::vector<int> category_of(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < map.instance.size(); ++i) {
    const int id = map.instance[i];
    if (id < 0) {
      throw PartitionViolation("pixel " + std::to_string(i) + " has negative instance id " +
                               std::to_string(id));
    }
    const int cat = map.category[i];
    if (cat < 0) throw PartitionViolation("pixel " + std::to_string(i) + " has negative category");
    auto& seen = category_of[static_cast<std::size_t>(id)];
    if (seen == -1) {
      seen = cat;
    } else if (seen != cat) {
      throw PartitionViolation("instance " + std::to_string(id) + " spans categories " +
                               std::to_string(seen) + " and " + std::to_string(cat));
    }
  }
  for (int id = 0; id < n; ++id) {
    if (category_of[static_cast<std::size_t>(id)] == -1) {
      throw PartitionViolation("instance ids are not contiguous: id " + std::to_string(id) +
                               " has no pixels");
    }
  }
}

Mask instance_mask(const PanopticMap& map, int instance_id) {
  Mask m(map.height(), map.width(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = map.instance[i] == instance_id ? 1 : 0;
  return m;
}

std::uint64_t image_fingerprint(const Image& image) {
  // FNV-1a over the 8-bit quantized pixels and the shape.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(image.height()));
  mix(static_cast<std::uint64_t>(image.width()));
  for (float v : quantize8(image).pixels.values) mix(static_cast<std::uint64_t>(std::lround(v * 255.0f)));
  return h;
}

PanopticMap OracleSegmenter::segment(const Image& image) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = truth_.find(image_fingerprint(image)); it != truth_.end()) return it->second;
  }
  const auto& v = image.pixels.values;
  const auto plane = image.pixels.plane_size();
  bool uniform = true;
  for (int c = 0; c < 3 && uniform; ++c) {
    const float ref = v[c * plane];
    for (std::size_t i = 0; i < plane; ++i) {
      if (v[c * plane + i] != ref) {
        uniform = false;
        break;
      }
    }
  }
  if (!uniform) throw NotFound("oracle segmenter has no ground truth for this image");
  return PanopticMap{Grid<int>(image.height(), image.width(), 0), Grid<int>(image.height(), image.width(), 0)};
}

void OracleSegmenter::add(const Image& image, PanopticMap map) {
  validate_partition(map);
  std::lock_guard lock(mutex_);
  truth_[image_fingerprint(image)] = std::move(map);
}

void OracleSegmenter::add_dataset(const std::filesystem::path& root) {
  const auto scenes = root / "scenes";
  if (!std::filesystem::exists(scenes)) return;
  for (const auto& entry : std::filesystem::directory_iterator(scenes)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    const auto j = nlohmann::json::parse(in);
    const int h = j.at("height").get<int>();
    const int w = j.at("width").get<int>();
    PanopticMap map{Grid<int>(h, w, -1), Grid<int>(h, w, -1)};
    for (const auto& obj : j.at("objects")) {
      const Mask m = rle_decode(rle_from_json(obj.at("mask_rle")));
      const int id = obj.at("id").get<int>();
      const int cat = obj.at("category").get<int>();
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i]) {
          map.instance[i] = id;
          map.category[i] = cat;
        }
      }
    }
    const auto image_path = root / j.at("image").get<std::string>();
    add(png_read(image_path), std::move(map));
  }
}

std::size_t OracleSegmenter::size() const {
  std::lock_guard lock(mutex_);
  return truth_.size();
}

PanopticMap panoptic_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const int h = j.at("height").get<int>();
    const int w = j.at("width").get<int>();
    const auto cat = j.at("category").get<std::vector<int>>();
    const auto inst = j.at("instance").get<std::vector<int>>();
    const auto n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    if (cat.size() != n || inst.size() != n) {
      throw PartitionViolation("external segmenter output has " + std::to_string(inst.size()) +
                               " labels for a " + std::to_string(h) + "x" + std::to_string(w) + " image");
    }
    PanopticMap map{Grid<int>(h, w), Grid<int>(h, w)};
    std::copy(cat.begin(), cat.end(), map.category.storage().begin());
    std::copy(inst.begin(), inst.end(), map.instance.storage().begin());
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed panoptic JSON: ") + e.what());
  }
}

PanopticMap ExternalSegmenter::segment(const Image& image) const {
  if (callback_) return callback_(image);
  const auto dir = std::filesystem::temp_directory_path() /
                   ("pairdiff-seg-" + std::to_string(image_fingerprint(image)) + "-" +
                    std::to_string(reinterpret_cast<std::uintptr_t>(this)));
  std::filesystem::create_directories(dir);
  const auto in_path = dir / "input.png";
  const auto out_path = dir / "output.json";
  png_write(image, in_path);
  const std::string cmd = command_ + " '" + in_path.string() + "' '" + out_path.string() + "'";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::filesystem::remove_all(dir);
    throw Error("external segmenter exited with status " + std::to_string(rc));
  }
  std::ifstream in(out_path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::filesystem::remove_all(dir);
  return panoptic_from_json(ss.str());
}

SegmenterRegistry::SegmenterRegistry() : oracle_(std::make_shared<OracleSegmenter>()) {
  backends_["oracle"] = oracle_;
}

void SegmenterRegistry::add(std::shared_ptr<Segmenter> segmenter) {
  const auto id = segmenter->id();
  backends_[id] = std::move(segmenter);
}

bool SegmenterRegistry::contains(const std::string& id) const { return backends_.count(id) != 0; }

OracleSegmenter& SegmenterRegistry::oracle() { return *oracle_; }

PanopticMap SegmenterRegistry::segment(const Image& image, const std::string& backend) const {
  validate_image(image);
  const auto it = backends_.find(backend);
  if (it == backends_.end()) throw InvalidArgument("unknown segmenter backend '" + backend + "'");
  PanopticMap map = it->second->segment(image);
  if (map.height() != image.height() || map.width() != image.width()) {
    throw PartitionViolation("segmenter '" + backend + "' returned a " + std::to_string(map.height()) +
                             "x" + std::to_string(map.width()) + " map for a " +
                             std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                             " image");
  }
  try {
    validate_partition(map);
  } catch (const PartitionViolation& e) {
    throw PartitionViolation("segmenter '" + backend + "' returned a non-partition: " + e.what());
  }
  return map;
}

}  // namespace pairdiff
