#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairdiff/panoptic.hpp"
#include "pairdiff/scene.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

struct PaletteColor {
  std::string name;
  std::array<float, 3> rgb;
};

// Fixed 12-colour palette; every generated fill is drawn from it.
const std::vector<PaletteColor>& palette();
std::optional<int> palette_index(const std::string& name);
// Palette entry closest (Euclidean RGB) to a colour.
int nearest_palette_index(const std::array<float, 3>& rgb);

enum class ShapeKind { circle = 1, square = 2, triangle = 3 };  // category ids
enum class Texture { none, stripes, noise };

struct ShapeObject {
  ShapeKind kind = ShapeKind::circle;
  float center_x = 0;
  float center_y = 0;
  float size = 0;  // radius or half-side
  int color = 0;   // palette index
  Texture texture = Texture::none;
  float amplitude = 0;
  float frequency = 0;
};

struct ShapesSceneSpec {
  int height = 32;
  int width = 32;
  int background_color = 0;
  std::vector<ShapeObject> objects;  // painted in order; later occlude earlier
  std::uint64_t seed = 0;            // texture noise
};

struct GeneratorConfig {
  int height = 32;
  int width = 32;
  int min_objects = 1;
  int max_objects = 4;
  double texture_probability = 0.25;
  float max_amplitude = 0.08f;
  float min_size = 4.0f;
  float max_size = 10.0f;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Per-object ground truth of a rendered scene, in canonical object order.
struct GroundTruthObject {
  int category = 0;
  int color = 0;
  Mask mask;
};

struct RenderedScene {
  Image image;
  PanopticMap map;  // instance ids in raster order of first pixel
  std::vector<GroundTruthObject> objects;
  std::string caption;
};

ShapesSceneSpec random_scene_spec(const GeneratorConfig& cfg, std::uint64_t seed);
RenderedScene render_scene(const ShapesSceneSpec& spec);

// "A picture of <color> <category> and <color> <category> …" over the
// objects of a rendered scene.
std::string scene_caption(const std::vector<GroundTruthObject>& objects);

struct DatasetManifest {
  std::filesystem::path root;
  int count = 0;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};  // train, val, test
  GeneratorConfig generator;
  std::uint64_t seed = 0;
  int format_version = 1;

  // Sample indices of split 0 (train), 1 (val) or 2 (test); contiguous ranges.
  std::vector<int> split(int which) const;
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path root);
};

inline constexpr int kDatasetFormatVersion = 1;

DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& root);

struct Sample {
  Image image;
  PanopticMap map;
  std::string caption;
  std::vector<GroundTruthObject> objects;
};

Sample load_sample(const DatasetManifest& manifest, int index);
RenderedScene generate_sample(const DatasetManifest& manifest, int index);

// Ground-truth scene JSON (scene schema without appearance, plus colours).
nlohmann::json ground_truth_json(const RenderedScene& scene, const std::string& image_path);

}  // namespace pairdiff
