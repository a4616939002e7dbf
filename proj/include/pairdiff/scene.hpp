#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairdiff/features.hpp"
#include "pairdiff/panoptic.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

// Category vocabulary of the synthetic shapes domain.
inline const std::vector<std::string>& shape_categories() {
  static const std::vector<std::string> names{"background", "circle", "square", "triangle"};
  return names;
}

struct ObjectStructure {
  int category = 0;
  Mask mask;
  friend bool operator==(const ObjectStructure&, const ObjectStructure&) = default;
};

struct AppearanceVector {
  std::vector<float> values;
  std::string encoder_id;
  int layer = 0;
  friend bool operator==(const AppearanceVector&, const AppearanceVector&) = default;
};

// Appearance vectors ordered low-level → high-level.
struct ObjectAppearance {
  std::vector<AppearanceVector> layers;
  friend bool operator==(const ObjectAppearance&, const ObjectAppearance&) = default;
};

struct SceneObject {
  ObjectStructure structure;
  ObjectAppearance appearance;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

// An image decomposed into objects whose masks partition the canvas. Object
// ids are the positions in `objects`.
struct SceneDescription {
  std::string image_path;
  int height = 0;
  int width = 0;
  std::vector<std::string> categories = shape_categories();
  std::vector<SceneObject> objects;
  std::optional<std::string> caption;

  int num_objects() const { return static_cast<int>(objects.size()); }
  const SceneObject& object(int id) const;
  friend bool operator==(const SceneDescription&, const SceneDescription&) = default;
};

// g = Σ(features ⊙ mask) / Σ mask per channel. Throws EmptyMask when the mask
// has no set cell and ShapeMismatch when it does not match (h, w).
AppearanceVector pool_appearance(const FeatureMap& features, const Mask& mask);

// Pixel-centre nearest-neighbour downsampling. When a non-empty source
// vanishes, the cell holding the source centroid is set.
Mask downsample_mask(const Mask& mask, int target_height, int target_width);

// Builds the scene for a partition: objects ordered by the raster position of
// their first pixel, each with one pooled vector per configured slot.
SceneDescription build_scene(const Image& image, const PanopticMap& map, const EncoderBank& bank,
                             std::vector<std::string> categories = shape_categories());

// Recomputes every object's appearance from `image` with the bank's slots.
void recompute_appearance(SceneDescription& scene, const Image& image, const EncoderBank& bank);

// Re-derives the panoptic map from the object masks (instance id = object id).
PanopticMap scene_panoptic(const SceneDescription& scene);

// Per-pixel owning object id at an arbitrary resolution (pixel-centre
// nearest-neighbour sampling of the instance map).
Grid<int> scene_instance_grid(const SceneDescription& scene, int height, int width);

// Throws PartitionViolation unless every pixel belongs to exactly one object
// and every mask is non-empty.
void validate_scene(const SceneDescription& scene);

// Index of the object with the largest mask (lowest id on ties).
int largest_object(const SceneDescription& scene);

nlohmann::json scene_to_json(const SceneDescription& scene);
SceneDescription scene_from_json(const nlohmann::json& j);
SceneDescription load_scene(const std::filesystem::path& path);
void save_scene(const SceneDescription& scene, const std::filesystem::path& path);

}  // namespace pairdiff
