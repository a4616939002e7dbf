#include "pairdiff/pipeline.hpp"

#include "pairdiff/error.hpp"
#include "pairdiff/png_io.hpp"

namespace pairdiff {

bool has_appearance(const SceneDescription& scene, const AppearanceConfig& cfg) {
  for (const auto& o : scene.objects) {
    if (o.appearance.layers.size() != cfg.slots.size()) return false;
    for (std::size_t l = 0; l < cfg.slots.size(); ++l) {
      if (o.appearance.layers[l].encoder_id != cfg.slots[l].encoder_id ||
          o.appearance.layers[l].layer != cfg.slots[l].layer) {
        return false;
      }
    }
  }
  return true;
}

LoadedScene load_scene_with_image(const std::filesystem::path& scene_path, const EncoderBank& bank) {
  if (!std::filesystem::exists(scene_path)) throw NotFound("scene not found: " + scene_path.string());
  LoadedScene out;
  out.scene = load_scene(scene_path);
  std::filesystem::path img = out.scene.image_path;
  if (img.empty()) throw NotFound("scene " + scene_path.string() + " names no image");
  if (img.is_relative()) {
    const auto dir = scene_path.parent_path();
    img = std::filesystem::exists(dir / img) ? dir / img : dir.parent_path() / img;
  }
  if (!std::filesystem::exists(img)) throw NotFound("scene image not found: " + img.string());
  out.image = png_read(img);
  if (out.image.height() != out.scene.height || out.image.width() != out.scene.width) {
    throw ShapeMismatch("scene size differs from its image");
  }
  if (!has_appearance(out.scene, bank.config())) recompute_appearance(out.scene, out.image, bank);
  return out;
}

SamplerConfig sampler_config(const EditSpec& spec) {
  SamplerConfig c;
  c.steps = spec.sampler.steps.value_or(kDefaultEditSteps);
  c.eta = spec.sampler.eta.value_or(0.0);
  c.combiner = spec.sampler.combiner.value_or(Combiner::factorized);
  c.seed = spec.seed;
  return c;
}

EditOutcome execute_edit(const DiffusionModel& model, const LoadedScene& target, const EditSpec& spec,
                         const SceneResolver& resolve, const ProgressFn& progress) {
  validate_edit_spec(spec);
  if (target.image.height() != model.image_resolution() || target.image.width() != model.image_resolution()) {
    throw ShapeMismatch("scene image is " + std::to_string(target.image.height()) + "×" +
                        std::to_string(target.image.width()) + ", the model expects " +
                        std::to_string(model.image_resolution()));
  }
  EditOutcome out;
  out.edit = apply_edit(target.scene, spec, resolve);
  const int r = model.config().resolution;
  out.bundle = assemble_conditioning(out.edit.scene, model.appearance, r, r);
  out.sampler = sampler_config(spec);
  out.image = sample(model, out.bundle, spec.guidance, out.sampler, out.edit.region, target.image, progress);
  return out;
}

std::vector<std::uint8_t> result_png(const Image& image) { return png_encode(image); }

}  // namespace pairdiff
