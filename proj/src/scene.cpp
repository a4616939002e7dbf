#include "pairdiff/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "pairdiff/error.hpp"
#include "pairdiff/rle.hpp"

namespace pairdiff {

const SceneObject& SceneDescription::object(int id) const {
  if (id < 0 || id >= num_objects()) {
    throw NotFound("scene has no object " + std::to_string(id) + " (" + std::to_string(num_objects()) +
                   " objects)");
  }
  return objects[static_cast<std::size_t>(id)];
}

AppearanceVector pool_appearance(const FeatureMap& features, const Mask& mask) {
  const Tensor3& f = features.values;
  if (mask.height() != f.height || mask.width() != f.width) {
    throw ShapeMismatch("mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                        " but features are " + std::to_string(f.height) + "x" + std::to_string(f.width));
  }
  const std::size_t area = mask_area(mask);
  if (area == 0) throw EmptyMask();
  AppearanceVector g{std::vector<float>(static_cast<std::size_t>(f.channels)), features.encoder_id,
                     features.layer};
  for (int c = 0; c < f.channels; ++c) {
    const auto plane = f.plane(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (mask[i]) acc += plane[i];
    }
    g.values[static_cast<std::size_t>(c)] = static_cast<float>(acc / static_cast<double>(area));
  }
  return g;
}

Mask downsample_mask(const Mask& mask, int target_height, int target_width) {
  const int H = mask.height();
  const int W = mask.width();
  if (target_height < 1 || target_width < 1 || target_height > H || target_width > W) {
    throw InvalidArgument("downsample_mask: target " + std::to_string(target_height) + "x" +
                          std::to_string(target_width) + " invalid for source " + std::to_string(H) +
                          "x" + std::to_string(W));
  }
  Mask out(target_height, target_width, 0);
  bool any = false;
  for (int r = 0; r < target_height; ++r) {
    const int sr = static_cast<int>((static_cast<long long>(2 * r + 1) * H) / (2LL * target_height));
    for (int c = 0; c < target_width; ++c) {
      const int sc = static_cast<int>((static_cast<long long>(2 * c + 1) * W) / (2LL * target_width));
      out(r, c) = mask(sr, sc) ? 1 : 0;
      any = any || out(r, c);
    }
  }
  if (!any) {
    double sum_r = 0.0;
    double sum_c = 0.0;
    std::size_t count = 0;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        if (mask(r, c)) {
          sum_r += r + 0.5;
          sum_c += c + 0.5;
          ++count;
        }
      }
    }
    if (count > 0) {
      const double cr = sum_r / static_cast<double>(count);
      const double cc = sum_c / static_cast<double>(count);
      const int tr = std::min(target_height - 1, static_cast<int>(cr * target_height / H));
      const int tc = std::min(target_width - 1, static_cast<int>(cc * target_width / W));
      out(tr, tc) = 1;
    }
  }
  return out;
}

namespace {

ObjectAppearance pool_all_slots(const std::vector<const FeatureMap*>& slot_features, const Mask& mask) {
  ObjectAppearance app;
  for (const FeatureMap* fm : slot_features) {
    const Mask m = (fm->values.height == mask.height() && fm->values.width == mask.width())
                       ? mask
                       : downsample_mask(mask, fm->values.height, fm->values.width);
    app.layers.push_back(pool_appearance(*fm, m));
  }
  return app;
}

std::vector<FeatureMap> compute_slot_features(const Image& image, const EncoderBank& bank,
                                              std::vector<const FeatureMap*>& per_slot) {
  std::vector<FeatureMap> unique;
  std::vector<std::size_t> index;
  for (const auto& slot : bank.config().slots) {
    auto it = std::find_if(unique.begin(), unique.end(), [&](const FeatureMap& f) {
      return f.encoder_id == slot.encoder_id && f.layer == slot.layer;
    });
    if (it == unique.end()) {
      unique.push_back(bank.get(slot.encoder_id).extract(image, slot.layer));
      index.push_back(unique.size() - 1);
    } else {
      index.push_back(static_cast<std::size_t>(it - unique.begin()));
    }
  }
  per_slot.clear();
  for (std::size_t i : index) per_slot.push_back(&unique[i]);
  return unique;
}

}  // namespace

SceneDescription build_scene(const Image& image, const PanopticMap& map, const EncoderBank& bank,
                             std::vector<std::string> categories) {
  validate_image(image);
  validate_partition(map);
  if (map.height() != image.height() || map.width() != image.width()) {
    throw ShapeMismatch("panoptic map does not match image size");
  }
  const int n = map.num_instances();
  std::vector<std::size_t> first(static_cast<std::size_t>(n), map.instance.size());
  for (std::size_t i = 0; i < map.instance.size(); ++i) {
    auto& f = first[static_cast<std::size_t>(map.instance[i])];
    f = std::min(f, i);
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return first[static_cast<std::size_t>(a)] < first[static_cast<std::size_t>(b)];
  });

  std::vector<const FeatureMap*> slot_features;
  const auto features = compute_slot_features(image, bank, slot_features);

  SceneDescription scene;
  scene.height = image.height();
  scene.width = image.width();
  scene.categories = std::move(categories);
  for (int inst : order) {
    SceneObject obj;
    obj.structure.mask = instance_mask(map, inst);
    obj.structure.category = map.category[first[static_cast<std::size_t>(inst)]];
    obj.appearance = pool_all_slots(slot_features, obj.structure.mask);
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

void recompute_appearance(SceneDescription& scene, const Image& image, const EncoderBank& bank) {
  std::vector<const FeatureMap*> slot_features;
  const auto features = compute_slot_features(image, bank, slot_features);
  for (auto& obj : scene.objects) obj.appearance = pool_all_slots(slot_features, obj.structure.mask);
}

PanopticMap scene_panoptic(const SceneDescription& scene) {
  PanopticMap map{Grid<int>(scene.height, scene.width, -1), Grid<int>(scene.height, scene.width, -1)};
  for (int id = 0; id < scene.num_objects(); ++id) {
    const auto& obj = scene.objects[static_cast<std::size_t>(id)];
    for (std::size_t i = 0; i < obj.structure.mask.size(); ++i) {
      if (obj.structure.mask[i]) {
        map.instance[i] = id;
        map.category[i] = obj.structure.category;
      }
    }
  }
  return map;
}

Grid<int> scene_instance_grid(const SceneDescription& scene, int height, int width) {
  const PanopticMap full = scene_panoptic(scene);
  if (height == scene.height && width == scene.width) return full.instance;
  Grid<int> out(height, width, -1);
  for (int r = 0; r < height; ++r) {
    const int sr = static_cast<int>((static_cast<long long>(2 * r + 1) * scene.height) / (2LL * height));
    for (int c = 0; c < width; ++c) {
      const int sc = static_cast<int>((static_cast<long long>(2 * c + 1) * scene.width) / (2LL * width));
      out(r, c) = full.instance(sr, sc);
    }
  }
  return out;
}

void validate_scene(const SceneDescription& scene) {
  if (scene.height < 1 || scene.width < 1) throw PartitionViolation("scene has no pixels");
  Grid<int> owners(scene.height, scene.width, 0);
  for (int id = 0; id < scene.num_objects(); ++id) {
    const auto& m = scene.objects[static_cast<std::size_t>(id)].structure.mask;
    if (m.height() != scene.height || m.width() != scene.width) {
      throw PartitionViolation("object " + std::to_string(id) + " mask has the wrong size");
    }
    if (mask_empty(m)) throw PartitionViolation("object " + std::to_string(id) + " has an empty mask");
    for (std::size_t i = 0; i < m.size(); ++i) owners[i] += m[i] ? 1 : 0;
  }
  for (std::size_t i = 0; i < owners.size(); ++i) {
    if (owners[i] != 1) {
      throw PartitionViolation("pixel " + std::to_string(i) + " belongs to " + std::to_string(owners[i]) +
                               " objects");
    }
  }
}

int largest_object(const SceneDescription& scene) {
  int best = 0;
  std::size_t best_area = 0;
  for (int id = 0; id < scene.num_objects(); ++id) {
    const auto area = mask_area(scene.objects[static_cast<std::size_t>(id)].structure.mask);
    if (area > best_area) {
      best_area = area;
      best = id;
    }
  }
  return best;
}

nlohmann::json scene_to_json(const SceneDescription& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (int id = 0; id < scene.num_objects(); ++id) {
    const auto& obj = scene.objects[static_cast<std::size_t>(id)];
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& g : obj.appearance.layers) {
      layers.push_back({{"encoder", g.encoder_id}, {"layer", g.layer}, {"values", g.values}});
    }
    objects.push_back({{"id", id},
                       {"category", obj.structure.category},
                       {"mask_rle", rle_to_json(rle_encode(obj.structure.mask))},
                       {"appearance", {{"layers", layers}}}});
  }
  return {{"image", scene.image_path},
          {"width", scene.width},
          {"height", scene.height},
          {"categories", scene.categories},
          {"objects", objects},
          {"caption", scene.caption ? nlohmann::json(*scene.caption) : nlohmann::json(nullptr)}};
}

SceneDescription scene_from_json(const nlohmann::json& j) {
  try {
    SceneDescription scene;
    scene.image_path = j.value("image", std::string{});
    scene.width = j.at("width").get<int>();
    scene.height = j.at("height").get<int>();
    if (j.contains("categories")) scene.categories = j.at("categories").get<std::vector<std::string>>();
    const auto& objs = j.at("objects");
    scene.objects.resize(objs.size());
    for (const auto& o : objs) {
      const int id = o.at("id").get<int>();
      if (id < 0 || id >= static_cast<int>(objs.size())) {
        throw InvalidArgument("scene object id " + std::to_string(id) + " out of range");
      }
      SceneObject& obj = scene.objects[static_cast<std::size_t>(id)];
      obj.structure.category = o.at("category").get<int>();
      obj.structure.mask = rle_decode(rle_from_json(o.at("mask_rle")));
      if (o.contains("appearance")) {
        for (const auto& g : o.at("appearance").at("layers")) {
          obj.appearance.layers.push_back(AppearanceVector{g.at("values").get<std::vector<float>>(),
                                                           g.at("encoder").get<std::string>(),
                                                           g.at("layer").get<int>()});
        }
      }
    }
    if (j.contains("caption") && !j.at("caption").is_null()) scene.caption = j.at("caption").get<std::string>();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed scene JSON: ") + e.what());
  }
}

SceneDescription load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open scene " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("scene " + path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

void save_scene(const SceneDescription& scene, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << scene_to_json(scene).dump(1) << '\n';
}

}  // namespace pairdiff
