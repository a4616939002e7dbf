#include "pairdiff/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "pairdiff/error.hpp"
#include "pairdiff/png_io.hpp"
#include "pairdiff/rle.hpp"
#include "pairdiff/rng.hpp"

namespace pairdiff {

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> colors{
      {"red", {0.90f, 0.10f, 0.10f}},     {"green", {0.10f, 0.75f, 0.20f}},
      {"blue", {0.15f, 0.25f, 0.90f}},    {"yellow", {0.95f, 0.90f, 0.10f}},
      {"cyan", {0.10f, 0.85f, 0.90f}},    {"magenta", {0.85f, 0.15f, 0.80f}},
      {"orange", {0.95f, 0.55f, 0.10f}},  {"purple", {0.50f, 0.20f, 0.70f}},
      {"white", {0.97f, 0.97f, 0.97f}},   {"black", {0.05f, 0.05f, 0.05f}},
      {"gray", {0.50f, 0.50f, 0.50f}},    {"brown", {0.55f, 0.35f, 0.15f}},
  };
  return colors;
}

std::optional<int> palette_index(const std::string& name) {
  const auto& p = palette();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

int nearest_palette_index(const std::array<float, 3>& rgb) {
  const auto& p = palette();
  int best = 0;
  double best_d = 1e30;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += std::pow(rgb[c] - p[i].rgb[c], 2);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"texture_probability", texture_probability},
          {"max_amplitude", max_amplitude},
          {"min_size", min_size},
          {"max_size", max_size}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.texture_probability = j.value("texture_probability", c.texture_probability);
  c.max_amplitude = j.value("max_amplitude", c.max_amplitude);
  c.min_size = j.value("min_size", c.min_size);
  c.max_size = j.value("max_size", c.max_size);
  return c;
}

ShapesSceneSpec random_scene_spec(const GeneratorConfig& cfg, std::uint64_t seed) {
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) throw InvalidArgument("bad object count range");
  Rng rng(seed);
  const int n_colors = static_cast<int>(palette().size());
  ShapesSceneSpec spec;
  spec.height = cfg.height;
  spec.width = cfg.width;
  spec.seed = rng.next_u64();
  spec.background_color = static_cast<int>(rng.uniform_int(0, n_colors - 1));
  const auto count = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  for (std::int64_t k = 0; k < count; ++k) {
    ShapeObject o;
    o.kind = static_cast<ShapeKind>(rng.uniform_int(1, 3));
    o.size = static_cast<float>(cfg.min_size + rng.uniform() * (cfg.max_size - cfg.min_size));
    const float margin = std::min(o.size, 0.5f * std::min(cfg.width, cfg.height) - 1.0f);
    o.center_x = static_cast<float>(margin + rng.uniform() * (cfg.width - 2.0 * margin));
    o.center_y = static_cast<float>(margin + rng.uniform() * (cfg.height - 2.0 * margin));
    o.color = static_cast<int>(rng.uniform_int(0, n_colors - 2));
    if (o.color >= spec.background_color) ++o.color;
    if (rng.bernoulli(cfg.texture_probability)) {
      o.texture = rng.bernoulli(0.5) ? Texture::stripes : Texture::noise;
      o.amplitude = static_cast<float>(0.03 + rng.uniform() * std::max(0.0f, cfg.max_amplitude - 0.03f));
      o.frequency = static_cast<float>(0.15 + rng.uniform() * 0.35);
    }
    spec.objects.push_back(o);
  }
  return spec;
}

namespace {

bool covers(const ShapeObject& o, float px, float py) {
  const float dx = px - o.center_x;
  const float dy = py - o.center_y;
  switch (o.kind) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= o.size * o.size;
    case ShapeKind::square:
      return std::abs(dx) <= o.size && std::abs(dy) <= o.size;
    case ShapeKind::triangle: {
      if (dy < -o.size || dy > o.size) return false;
      const float half = 0.5f * (dy + o.size);
      return std::abs(dx) <= half;
    }
  }
  return false;
}

}  // namespace

std::string scene_caption(const std::vector<GroundTruthObject>& objects) {
  std::string text = "A picture of";
  const auto& cats = shape_categories();
  for (std::size_t i = 0; i < objects.size(); ++i) {
    text += i == 0 ? " " : " and ";
    text += palette()[static_cast<std::size_t>(objects[i].color)].name + " " +
            cats[static_cast<std::size_t>(objects[i].category)];
  }
  return text;
}

RenderedScene render_scene(const ShapesSceneSpec& spec) {
  const int h = spec.height;
  const int w = spec.width;
  if (h < kMinImageSide || w < kMinImageSide) throw InvalidArgument("canvas must be at least 8x8");
  const int n_shapes = static_cast<int>(spec.objects.size());
  // Layer index per pixel: -1 background, k = shape k.
  Grid<int> layer(h, w, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < n_shapes; ++k) {
        if (covers(spec.objects[static_cast<std::size_t>(k)], x + 0.5f, y + 0.5f)) layer(y, x) = k;
      }
    }
  }

  Rng noise(spec.seed);
  std::vector<std::vector<float>> noise_fields;
  for (int k = 0; k < n_shapes; ++k) {
    std::vector<float> f(static_cast<std::size_t>(h) * w);
    for (float& v : f) v = static_cast<float>(2.0 * noise.uniform() - 1.0);
    noise_fields.push_back(std::move(f));
  }

  Image image(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int k = layer(y, x);
      const int color = k < 0 ? spec.background_color : spec.objects[static_cast<std::size_t>(k)].color;
      float offset = 0.0f;
      if (k >= 0) {
        const auto& o = spec.objects[static_cast<std::size_t>(k)];
        if (o.texture == Texture::stripes) {
          offset = o.amplitude * std::sin(2.0f * std::numbers::pi_v<float> * o.frequency * static_cast<float>(x));
        } else if (o.texture == Texture::noise) {
          offset = o.amplitude * noise_fields[static_cast<std::size_t>(k)][static_cast<std::size_t>(y) * w + x];
        }
      }
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = std::clamp(palette()[static_cast<std::size_t>(color)].rgb[static_cast<std::size_t>(c)] + offset, 0.0f, 1.0f);
      }
    }
  }

  // Visible layers, ordered by the raster position of their first pixel.
  std::vector<std::size_t> first(static_cast<std::size_t>(n_shapes) + 1, layer.size());
  for (std::size_t i = 0; i < layer.size(); ++i) {
    auto& f = first[static_cast<std::size_t>(layer[i] + 1)];
    f = std::min(f, i);
  }
  std::vector<int> visible;
  for (int k = -1; k < n_shapes; ++k) {
    if (first[static_cast<std::size_t>(k + 1)] < layer.size()) visible.push_back(k);
  }
  std::sort(visible.begin(), visible.end(), [&](int a, int b) {
    return first[static_cast<std::size_t>(a + 1)] < first[static_cast<std::size_t>(b + 1)];
  });

  RenderedScene out;
  out.image = quantize8(image);
  out.map = PanopticMap{Grid<int>(h, w), Grid<int>(h, w)};
  for (std::size_t id = 0; id < visible.size(); ++id) {
    const int k = visible[id];
    GroundTruthObject gt;
    gt.category = k < 0 ? 0 : static_cast<int>(spec.objects[static_cast<std::size_t>(k)].kind);
    gt.color = k < 0 ? spec.background_color : spec.objects[static_cast<std::size_t>(k)].color;
    gt.mask = Mask(h, w, 0);
    for (std::size_t i = 0; i < layer.size(); ++i) {
      if (layer[i] == k) {
        gt.mask[i] = 1;
        out.map.instance[i] = static_cast<int>(id);
        out.map.category[i] = gt.category;
      }
    }
    out.objects.push_back(std::move(gt));
  }
  out.caption = scene_caption(out.objects);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<int> DatasetManifest::split(int which) const {
  if (which < 0 || which > 2) throw InvalidArgument("split index must be 0, 1 or 2");
  const double total = split_ratios[0] + split_ratios[1] + split_ratios[2];
  const int n_train = static_cast<int>(std::floor(count * split_ratios[0] / total));
  const int n_val = static_cast<int>(std::floor(count * split_ratios[1] / total));
  const int begin = which == 0 ? 0 : which == 1 ? n_train : n_train + n_val;
  const int end = which == 0 ? n_train : which == 1 ? n_train + n_val : count;
  std::vector<int> out(static_cast<std::size_t>(std::max(0, end - begin)));
  std::iota(out.begin(), out.end(), begin);
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  return {{"count", count},
          {"split_ratios", split_ratios},
          {"generator", generator.to_json()},
          {"seed", seed},
          {"format_version", format_version}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, std::filesystem::path root) {
  DatasetManifest m;
  m.root = std::move(root);
  m.count = j.at("count").get<int>();
  m.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
  m.generator = GeneratorConfig::from_json(j.at("generator"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kDatasetFormatVersion) {
    throw VersionMismatch("dataset format version " + std::to_string(m.format_version) + " is not supported");
  }
  return m;
}

nlohmann::json ground_truth_json(const RenderedScene& scene, const std::string& image_path) {
  nlohmann::json objects = nlohmann::json::array();
  for (std::size_t id = 0; id < scene.objects.size(); ++id) {
    const auto& o = scene.objects[id];
    const auto& color = palette()[static_cast<std::size_t>(o.color)];
    objects.push_back({{"id", id},
                       {"category", o.category},
                       {"mask_rle", rle_to_json(rle_encode(o.mask))},
                       {"color", color.name},
                       {"rgb", color.rgb}});
  }
  return {{"image", image_path},
          {"width", scene.image.width()},
          {"height", scene.image.height()},
          {"categories", shape_categories()},
          {"objects", objects},
          {"caption", scene.caption}};
}

RenderedScene generate_sample(const DatasetManifest& manifest, int index) {
  return render_scene(random_scene_spec(manifest.generator, derive_seed(manifest.seed, static_cast<std::uint64_t>(index))));
}

DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  if (n < 0) throw InvalidArgument("sample count must be non-negative");
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.count = n;
  manifest.generator = cfg;
  manifest.seed = seed;
  std::filesystem::create_directories(out_dir);
  if (n > 0) {
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "scenes");
  }
  for (int i = 0; i < n; ++i) {
    const RenderedScene scene = generate_sample(manifest, i);
    const std::string image_rel = "images/" + std::to_string(i) + ".png";
    png_write(scene.image, out_dir / image_rel);
    std::ofstream out(out_dir / "scenes" / (std::to_string(i) + ".json"));
    out << ground_truth_json(scene, image_rel).dump(1) << '\n';
  }
  std::ofstream out(out_dir / "manifest.json");
  out << manifest.to_json().dump(2) << '\n';
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw NotFound("no manifest.json in " + root.string());
  DatasetManifest m = DatasetManifest::from_json(nlohmann::json::parse(in), root);
  for (int i = 0; i < m.count; ++i) {
    if (!std::filesystem::exists(root / "images" / (std::to_string(i) + ".png")) ||
        !std::filesystem::exists(root / "scenes" / (std::to_string(i) + ".json"))) {
      throw NotFound("dataset sample " + std::to_string(i) + " is missing on disk");
    }
  }
  return m;
}

Sample load_sample(const DatasetManifest& manifest, int index) {
  if (index < 0 || index >= manifest.count) throw NotFound("sample index " + std::to_string(index) + " out of range");
  std::ifstream in(manifest.root / "scenes" / (std::to_string(index) + ".json"));
  if (!in) throw NotFound("missing scene JSON for sample " + std::to_string(index));
  const auto j = nlohmann::json::parse(in);
  Sample s;
  s.image = png_read(manifest.root / j.at("image").get<std::string>());
  const int h = j.at("height").get<int>();
  const int w = j.at("width").get<int>();
  s.map = PanopticMap{Grid<int>(h, w, -1), Grid<int>(h, w, -1)};
  for (const auto& o : j.at("objects")) {
    GroundTruthObject gt;
    gt.category = o.at("category").get<int>();
    gt.color = palette_index(o.at("color").get<std::string>()).value_or(0);
    gt.mask = rle_decode(rle_from_json(o.at("mask_rle")));
    const int id = o.at("id").get<int>();
    for (std::size_t i = 0; i < gt.mask.size(); ++i) {
      if (gt.mask[i]) {
        s.map.instance[i] = id;
        s.map.category[i] = gt.category;
      }
    }
    s.objects.push_back(std::move(gt));
  }
  s.caption = scene_caption(s.objects);
  return s;
}

}  // namespace pairdiff
