#include "pairdiff/editops.hpp"

#include <cmath>

#include "pairdiff/error.hpp"
#include "pairdiff/rle.hpp"

namespace pairdiff {

void GuidanceWeights::validate() const {
  for (double s : {s_structure, s_appearance, s_text}) {
    if (!std::isfinite(s) || s < 0.0) throw InvalidEditSpec("guidance weights must be finite and non-negative");
  }
}

std::vector<std::string> guidance_hints(const GuidanceWeights& w) {
  std::vector<std::string> hints;
  if (w.s_structure <= w.s_appearance) hints.emplace_back("s_S <= s_F: structure may lose integrity");
  if (w.s_text > 0.0 && w.s_text <= w.s_appearance) hints.emplace_back("s_y <= s_F: the prompt may have little effect");
  return hints;
}

std::string to_string(EditKind kind) {
  switch (kind) {
    case EditKind::appearance: return "appearance";
    case EditKind::shape: return "shape";
    case EditKind::add: return "add";
    case EditKind::variation: return "variation";
  }
  return "unknown";
}

EditKind edit_kind_from_string(const std::string& s) {
  if (s == "appearance") return EditKind::appearance;
  if (s == "shape") return EditKind::shape;
  if (s == "add") return EditKind::add;
  if (s == "variation") return EditKind::variation;
  throw InvalidEditSpec("unknown edit kind '" + s + "'");
}

std::string to_string(Combiner c) { return c == Combiner::factorized ? "factorized" : "joint"; }

Combiner combiner_from_string(const std::string& s) {
  if (s == "factorized") return Combiner::factorized;
  if (s == "joint") return Combiner::joint;
  throw InvalidArgument("unknown combiner '" + s + "'");
}

void validate_edit_spec(const EditSpec& spec) {
  spec.guidance.validate();
  if (spec.target < 0 && spec.kind != EditKind::add) throw InvalidEditSpec("target must be a non-negative object id");
  if (spec.sampler.steps && *spec.sampler.steps < 1) throw InvalidEditSpec("sampler steps must be >= 1");
  if (spec.sampler.eta && !(*spec.sampler.eta >= 0.0 && *spec.sampler.eta <= 1.0)) {
    throw InvalidEditSpec("sampler eta must lie in [0,1]");
  }
  if (spec.region_mask && mask_empty(*spec.region_mask)) throw InvalidEditSpec("region_mask is empty");
  switch (spec.kind) {
    case EditKind::appearance:
      if (!spec.ref) throw InvalidEditSpec("appearance edit requires ref");
      if (spec.lambda) {
        if (!(*spec.lambda >= 0.0 && *spec.lambda <= 1.0)) throw InvalidEditSpec("lambda must lie in [0,1]");
      } else if (!std::isfinite(spec.a0) || !std::isfinite(spec.a1)) {
        throw InvalidEditSpec("a0 and a1 must be finite");
      }
      break;
    case EditKind::shape:
      if (!spec.new_mask) throw InvalidEditSpec("shape edit requires new_mask");
      if (mask_empty(*spec.new_mask)) throw InvalidEditSpec("new_mask is empty");
      break;
    case EditKind::add:
      if (!spec.new_mask) throw InvalidEditSpec("add requires new_mask");
      if (mask_empty(*spec.new_mask)) throw InvalidEditSpec("new_mask is empty");
      if (!spec.category || *spec.category < 0) throw InvalidEditSpec("add requires a category");
      if (!spec.ref) throw InvalidEditSpec("add requires ref as appearance source");
      break;
    case EditKind::variation:
      break;
  }
}

nlohmann::json edit_spec_to_json(const EditSpec& spec) {
  auto opt_mask = [](const std::optional<Mask>& m) {
    return m ? rle_to_json(rle_encode(*m)) : nlohmann::json(nullptr);
  };
  nlohmann::json sampler = nlohmann::json::object();
  if (spec.sampler.steps) sampler["steps"] = *spec.sampler.steps;
  if (spec.sampler.eta) sampler["eta"] = *spec.sampler.eta;
  if (spec.sampler.combiner) sampler["combiner"] = to_string(*spec.sampler.combiner);
  return {{"kind", to_string(spec.kind)},
          {"scene", spec.scene},
          {"target", spec.target},
          {"a0", spec.a0},
          {"a1", spec.a1},
          {"lambda", spec.lambda ? nlohmann::json(*spec.lambda) : nlohmann::json(nullptr)},
          {"new_mask_rle", opt_mask(spec.new_mask)},
          {"category", spec.category ? nlohmann::json(*spec.category) : nlohmann::json(nullptr)},
          {"ref", spec.ref ? nlohmann::json{{"scene", spec.ref->scene}, {"object", spec.ref->object}}
                           : nlohmann::json(nullptr)},
          {"seed", spec.seed},
          {"region_mask_rle", opt_mask(spec.region_mask)},
          {"guidance", {{"sS", spec.guidance.s_structure}, {"sF", spec.guidance.s_appearance}, {"sy", spec.guidance.s_text}}},
          {"prompt", spec.prompt ? nlohmann::json(*spec.prompt) : nlohmann::json(nullptr)},
          {"sampler", sampler}};
}

EditSpec edit_spec_from_json(const nlohmann::json& j) {
  auto present = [&j](const char* key) { return j.contains(key) && !j.at(key).is_null(); };
  try {
    EditSpec spec;
    spec.kind = edit_kind_from_string(j.at("kind").get<std::string>());
    spec.scene = j.value("scene", std::string{});
    spec.target = j.value("target", 0);
    spec.a0 = j.value("a0", 1.0);
    spec.a1 = j.value("a1", 0.0);
    if (present("lambda")) spec.lambda = j.at("lambda").get<double>();
    if (present("new_mask_rle")) spec.new_mask = rle_decode(rle_from_json(j.at("new_mask_rle")));
    if (present("category")) spec.category = j.at("category").get<int>();
    if (present("ref")) spec.ref = ObjectRef{j.at("ref").value("scene", std::string{}), j.at("ref").at("object").get<int>()};
    spec.seed = j.value("seed", std::uint64_t{0});
    if (present("region_mask_rle")) spec.region_mask = rle_decode(rle_from_json(j.at("region_mask_rle")));
    if (present("guidance")) {
      const auto& g = j.at("guidance");
      spec.guidance = GuidanceWeights{g.value("sS", 6.0), g.value("sF", 4.0), g.value("sy", 8.0)};
    }
    if (present("prompt")) spec.prompt = j.at("prompt").get<std::string>();
    if (present("sampler")) {
      const auto& s = j.at("sampler");
      if (s.contains("steps")) spec.sampler.steps = s.at("steps").get<int>();
      if (s.contains("eta")) spec.sampler.eta = s.at("eta").get<double>();
      if (s.contains("combiner")) spec.sampler.combiner = combiner_from_string(s.at("combiner").get<std::string>());
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidEditSpec(std::string("malformed EditSpec: ") + e.what());
  } catch (const InvalidEditSpec&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw InvalidEditSpec(e.what());
  }
}

// ---------------------------------------------------------------------------

std::optional<int> background_object(const SceneDescription& scene) {
  for (int id = 0; id < scene.num_objects(); ++id) {
    if (scene.objects[static_cast<std::size_t>(id)].structure.category == 0) return id;
  }
  return std::nullopt;
}

SceneDescription edit_appearance(const SceneDescription& scene, int object_id, const SceneDescription& ref_scene,
                                 int ref_object_id, double a0, double a1) {
  if (!std::isfinite(a0) || !std::isfinite(a1)) throw InvalidArgument("a0 and a1 must be finite");
  const auto& target = scene.object(object_id).appearance;
  const auto& ref = ref_scene.object(ref_object_id).appearance;
  if (target.layers.size() != ref.layers.size()) {
    throw ShapeMismatch("appearance tuples have different lengths");
  }
  SceneDescription out = scene;
  auto& layers = out.objects[static_cast<std::size_t>(object_id)].appearance.layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& r = ref.layers[l];
    auto& g = layers[l];
    if (g.encoder_id != r.encoder_id || g.layer != r.layer || g.values.size() != r.values.size()) {
      throw ShapeMismatch("appearance slot " + std::to_string(l) + " is not aligned with the reference");
    }
    for (std::size_t c = 0; c < g.values.size(); ++c) {
      g.values[c] = static_cast<float>(a0 * static_cast<double>(g.values[c]) + a1 * static_cast<double>(r.values[c]));
    }
  }
  return out;
}

SceneDescription interpolate_appearance(const SceneDescription& scene, int object_id, const SceneDescription& ref_scene,
                                        int ref_object_id, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0,1]");
  return edit_appearance(scene, object_id, ref_scene, ref_object_id, 1.0 - lambda, lambda);
}

namespace {

void check_mask_shape(const SceneDescription& scene, const Mask& m) {
  if (m.height() != scene.height || m.width() != scene.width) {
    throw ShapeMismatch("mask is " + std::to_string(m.height()) + "x" + std::to_string(m.width()) + ", scene is " +
                        std::to_string(scene.height) + "x" + std::to_string(scene.width));
  }
  if (mask_empty(m)) throw InvalidArgument("new mask is empty");
}

// Gives `claim` to object `owner` (or to `appended`, placed last, when
// owner == n), hands vacated pixels to the background and drops objects
// left empty.
SceneDescription reassign(const SceneDescription& scene, int owner, const Mask& claim,
                          std::optional<SceneObject> appended = std::nullopt) {
  const bool full = mask_area(claim) == claim.size();
  const auto bg = background_object(scene);
  const int n = scene.num_objects();
  if (full && !bg && n > (owner < n ? 1 : 0)) {
    throw PartitionViolation("mask covers the whole image and there is no background object");
  }
  SceneDescription out = scene;
  Mask vacated(scene.height, scene.width, 0);
  if (owner < n) {
    const Mask& old = scene.objects[static_cast<std::size_t>(owner)].structure.mask;
    for (std::size_t i = 0; i < old.size(); ++i) vacated[i] = (old[i] && !claim[i]) ? 1 : 0;
    out.objects[static_cast<std::size_t>(owner)].structure.mask = claim;
  }
  for (int id = 0; id < n; ++id) {
    if (id == owner) continue;
    auto& m = out.objects[static_cast<std::size_t>(id)].structure.mask;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (claim[i]) m[i] = 0;
    }
  }
  if (!mask_empty(vacated)) {
    if (!bg || *bg == owner) {
      throw PartitionViolation("vacated pixels have no background object to absorb them");
    }
    auto& m = out.objects[static_cast<std::size_t>(*bg)].structure.mask;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (vacated[i]) m[i] = 1;
    }
  }
  std::vector<SceneObject> kept;
  for (auto& obj : out.objects) {
    if (!mask_empty(obj.structure.mask)) kept.push_back(std::move(obj));
  }
  if (appended) {
    appended->structure.mask = claim;
    kept.push_back(std::move(*appended));
  }
  out.objects = std::move(kept);
  validate_scene(out);
  return out;
}

}  // namespace

SceneDescription edit_shape(const SceneDescription& scene, int object_id, const Mask& new_mask) {
  scene.object(object_id);
  check_mask_shape(scene, new_mask);
  return reassign(scene, object_id, new_mask);
}

SceneDescription add_object(const SceneDescription& scene, const Mask& new_mask, int category,
                            const ObjectAppearance& appearance) {
  check_mask_shape(scene, new_mask);
  if (category < 0) throw InvalidArgument("category must be non-negative");
  if (!scene.objects.empty()) {
    const auto& ref = scene.objects.front().appearance.layers;
    if (ref.size() != appearance.layers.size()) throw ShapeMismatch("appearance tuple is not layer-complete");
    for (std::size_t l = 0; l < ref.size(); ++l) {
      if (ref[l].encoder_id != appearance.layers[l].encoder_id || ref[l].layer != appearance.layers[l].layer ||
          ref[l].values.size() != appearance.layers[l].values.size()) {
        throw ShapeMismatch("appearance slot " + std::to_string(l) + " is not aligned with the scene");
      }
    }
  }
  SceneObject obj;
  obj.structure.category = category;
  obj.appearance = appearance;
  return reassign(scene, scene.num_objects(), new_mask, std::move(obj));
}

SceneDescription add_object(const SceneDescription& scene, const Mask& new_mask, int category,
                            const SceneDescription& ref_scene, int ref_object_id) {
  return add_object(scene, new_mask, category, ref_scene.object(ref_object_id).appearance);
}

std::pair<SceneDescription, EditSpec> make_variation(const SceneDescription& scene, int object_id, std::uint64_t seed) {
  EditSpec spec;
  spec.kind = EditKind::variation;
  spec.target = object_id;
  spec.seed = seed;
  spec.region_mask = scene.object(object_id).structure.mask;
  return {scene, spec};
}

EditResult apply_edit(const SceneDescription& scene, const EditSpec& spec, const SceneResolver& resolve) {
  validate_edit_spec(spec);
  auto resolve_ref = [&](const ObjectRef& ref) {
    return ref.scene.empty() || ref.scene == spec.scene ? scene : resolve(ref.scene);
  };
  EditResult result;
  switch (spec.kind) {
    case EditKind::appearance: {
      const SceneDescription ref = resolve_ref(*spec.ref);
      result.scene = spec.lambda ? interpolate_appearance(scene, spec.target, ref, spec.ref->object, *spec.lambda)
                                 : edit_appearance(scene, spec.target, ref, spec.ref->object, spec.a0, spec.a1);
      result.region = scene.object(spec.target).structure.mask;
      break;
    }
    case EditKind::shape: {
      const Mask old = scene.object(spec.target).structure.mask;
      result.scene = edit_shape(scene, spec.target, *spec.new_mask);
      result.region = old;
      for (std::size_t i = 0; i < old.size(); ++i) {
        if ((*spec.new_mask)[i]) result.region[i] = 1;
      }
      break;
    }
    case EditKind::add: {
      const SceneDescription ref = resolve_ref(*spec.ref);
      result.scene = add_object(scene, *spec.new_mask, *spec.category, ref, spec.ref->object);
      result.region = *spec.new_mask;
      break;
    }
    case EditKind::variation: {
      auto [same, vspec] = make_variation(scene, spec.target, spec.seed);
      result.scene = std::move(same);
      result.region = *vspec.region_mask;
      break;
    }
  }
  if (spec.region_mask) {
    if (spec.region_mask->height() != scene.height || spec.region_mask->width() != scene.width) {
      throw InvalidEditSpec("region_mask does not match the scene size");
    }
    result.region = *spec.region_mask;
  }
  if (spec.prompt) result.scene.caption = *spec.prompt;
  return result;
}

}  // namespace pairdiff
