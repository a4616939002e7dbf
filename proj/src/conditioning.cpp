#include "pairdiff/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "pairdiff/error.hpp"

namespace pairdiff {
namespace {

void resolve_resolution(const SceneDescription& scene, int& height, int& width) {
  if (height == 0) height = scene.height;
  if (width == 0) width = scene.width;
  if (height < 1 || width < 1) throw InvalidArgument("conditioning resolution must be positive");
}

const AppearanceVector& find_slot(const SceneObject& obj, const LayerRef& slot, int object_id) {
  for (const auto& g : obj.appearance.layers) {
    if (g.encoder_id == slot.encoder_id && g.layer == slot.layer) return g;
  }
  throw InvalidArgument("object " + std::to_string(object_id) + " has no appearance for " + slot.encoder_id +
                        " layer " + std::to_string(slot.layer));
}

}  // namespace

void ConditioningBundle::validate() const {
  if (appearance && !structure) throw InvalidArgument("appearance conditioning requires structure");
  if (appearance && structure) {
    for (const auto& a : *appearance) {
      if (a.values.height != structure->values.height || a.values.width != structure->values.width) {
        throw ShapeMismatch("appearance and structure tensors differ in resolution");
      }
    }
  }
}

int ConditioningBundle::height() const { return structure ? structure->values.height : 0; }
int ConditioningBundle::width() const { return structure ? structure->values.width : 0; }

void DropoutConfig::validate() const {
  for (double p : {p_structure, p_appearance, p_text}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("dropout probability outside [0,1]");
  }
}

StructureTensor build_structure_tensor(const SceneDescription& scene, int height, int width) {
  resolve_resolution(scene, height, width);
  const Grid<int> owner = scene_instance_grid(scene, height, width);
  const int k = static_cast<int>(scene.categories.size());
  const int n = scene.num_objects();
  StructureTensor s{Tensor3(2, height, width)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int id = owner(y, x);
      const int cat = scene.objects[static_cast<std::size_t>(id)].structure.category;
      s.values.at(0, y, x) = k > 1 ? static_cast<float>(cat) / static_cast<float>(k - 1) : 0.0f;
      s.values.at(1, y, x) = static_cast<float>(id + 1) / static_cast<float>(n);
    }
  }
  return s;
}

PanopticMap decode_structure_tensor(const StructureTensor& s, int num_categories, int num_objects) {
  const int h = s.values.height;
  const int w = s.values.width;
  PanopticMap map{Grid<int>(h, w), Grid<int>(h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      map.category(y, x) =
          num_categories > 1 ? static_cast<int>(std::lround(s.values.at(0, y, x) * (num_categories - 1))) : 0;
      map.instance(y, x) = static_cast<int>(std::lround(s.values.at(1, y, x) * num_objects)) - 1;
    }
  }
  return map;
}

AppearanceTensor splat_appearance(const SceneDescription& scene, const LayerRef& slot, int height, int width) {
  resolve_resolution(scene, height, width);
  std::vector<std::vector<float>> normalized;
  int channels = -1;
  for (int id = 0; id < scene.num_objects(); ++id) {
    const auto& g = find_slot(scene.objects[static_cast<std::size_t>(id)], slot, id);
    if (channels < 0) channels = static_cast<int>(g.values.size());
    if (static_cast<int>(g.values.size()) != channels) {
      throw ShapeMismatch("appearance vectors of slot " + slot.encoder_id + "/" + std::to_string(slot.layer) +
                          " differ in length");
    }
    double sq = 0.0;
    for (float v : g.values) sq += static_cast<double>(v) * v;
    const double denom = std::max(std::sqrt(sq), static_cast<double>(kSplatEpsilon));
    std::vector<float> unit(g.values.size());
    for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = static_cast<float>(g.values[i] / denom);
    normalized.push_back(std::move(unit));
  }
  if (channels < 0) throw InvalidArgument("scene has no objects");

  const StructureTensor s = build_structure_tensor(scene, height, width);
  const Grid<int> owner = scene_instance_grid(scene, height, width);
  AppearanceTensor out{Tensor3(channels + 2, height, width), slot.encoder_id, slot.layer};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto& unit = normalized[static_cast<std::size_t>(owner(y, x))];
      for (int c = 0; c < channels; ++c) out.values.at(c, y, x) = unit[static_cast<std::size_t>(c)];
      out.values.at(channels, y, x) = s.values.at(0, y, x);
      out.values.at(channels + 1, y, x) = s.values.at(1, y, x);
    }
  }
  return out;
}

std::string auto_caption(const SceneDescription& scene) {
  const int id = largest_object(scene);
  const int cat = scene.object(id).structure.category;
  const std::string name = cat >= 0 && cat < static_cast<int>(scene.categories.size())
                               ? scene.categories[static_cast<std::size_t>(cat)]
                               : std::to_string(cat);
  return "A picture of " + name;
}

ConditioningBundle assemble_conditioning(const SceneDescription& scene, const AppearanceConfig& cfg, int height,
                                         int width) {
  resolve_resolution(scene, height, width);
  ConditioningBundle bundle;
  bundle.structure = build_structure_tensor(scene, height, width);
  std::vector<AppearanceTensor> app;
  for (const auto& slot : cfg.slots) app.push_back(splat_appearance(scene, slot, height, width));
  bundle.appearance = std::move(app);
  bundle.text = scene.caption ? *scene.caption : auto_caption(scene);
  return bundle;
}

ConditioningBundle apply_dropout(ConditioningBundle bundle, const DropoutConfig& cfg, Rng& rng) {
  cfg.validate();
  // All three draws are always consumed so the stream stays aligned.
  const bool drop_s = rng.bernoulli(cfg.p_structure);
  const bool drop_f = rng.bernoulli(cfg.p_appearance);
  const bool drop_y = rng.bernoulli(cfg.p_text);
  if (drop_s) bundle.structure.reset();
  if (drop_s || drop_f) bundle.appearance.reset();
  if (drop_y) bundle.text.reset();
  return bundle;
}

ConditioningBundle select_streams(const ConditioningBundle& bundle, bool structure, bool appearance, bool text) {
  ConditioningBundle out;
  if (structure) out.structure = bundle.structure;
  if (appearance && structure) out.appearance = bundle.appearance;
  if (text) out.text = bundle.text;
  return out;
}

NumericConditioning encode_null(const ConditioningBundle& bundle, const ConditioningShape& shape) {
  bundle.validate();
  NumericConditioning out;
  if (bundle.structure) {
    if (bundle.structure->values.height != shape.height || bundle.structure->values.width != shape.width) {
      throw ShapeMismatch("conditioning resolution " + std::to_string(bundle.structure->values.height) + "x" +
                          std::to_string(bundle.structure->values.width) + " does not match model resolution " +
                          std::to_string(shape.height) + "x" + std::to_string(shape.width));
    }
    out.structure = bundle.structure->values;
    out.present[0] = 1.0f;
  } else {
    out.structure = Tensor3(2, shape.height, shape.width);
  }
  if (bundle.appearance) {
    if (bundle.appearance->size() != 3) throw ShapeMismatch("appearance tuple must have 3 slots");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& a = (*bundle.appearance)[i];
      if (a.feature_channels() != shape.appearance_channels[i]) {
        throw ShapeMismatch("appearance slot " + std::to_string(i) + " has " +
                            std::to_string(a.feature_channels()) + " channels, model expects " +
                            std::to_string(shape.appearance_channels[i]));
      }
      out.appearance.push_back(a.values);
    }
    out.present[1] = 1.0f;
  } else {
    for (int c : shape.appearance_channels) out.appearance.emplace_back(c + 2, shape.height, shape.width);
  }
  if (bundle.text) {
    out.text = *bundle.text;
    out.present[2] = 1.0f;
  }
  return out;
}

}  // namespace pairdiff
