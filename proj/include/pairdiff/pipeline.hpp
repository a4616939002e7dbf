#pragma once

#include <filesystem>
#include <string>

#include "pairdiff/editops.hpp"
#include "pairdiff/sampler.hpp"

namespace pairdiff {

struct LoadedScene {
  SceneDescription scene;
  Image image;
};

// True when every object carries exactly the configured appearance slots.
bool has_appearance(const SceneDescription& scene, const AppearanceConfig& cfg);

// Reads a scene JSON and its image. A relative image path is looked up next
// to the scene file, then one directory up (dataset layout). Appearance is
// recomputed from the image when missing or built with other slots.
LoadedScene load_scene_with_image(const std::filesystem::path& scene_path, const EncoderBank& bank);

inline constexpr int kDefaultEditSteps = 20;

SamplerConfig sampler_config(const EditSpec& spec);

struct EditOutcome {
  Image image;
  EditResult edit;
  ConditioningBundle bundle;
  SamplerConfig sampler;
};

// apply_edit → assemble_conditioning → masked sampling inside the edit region
// with the target image as the original. Shared by the CLI and the service.
EditOutcome execute_edit(const DiffusionModel& model, const LoadedScene& target, const EditSpec& spec,
                         const SceneResolver& resolve, const ProgressFn& progress = {});

// 8-bit PNG bytes of an edit result.
std::vector<std::uint8_t> result_png(const Image& image);

}  // namespace pairdiff
