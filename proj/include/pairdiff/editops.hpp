#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "pairdiff/error.hpp"
#include "pairdiff/scene.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

// Guidance strengths of the multimodal classifier-free-guidance combiner.
struct GuidanceWeights {
  double s_structure = 6.0;
  double s_appearance = 4.0;
  double s_text = 8.0;

  void validate() const;
  friend bool operator==(const GuidanceWeights&, const GuidanceWeights&) = default;
};

// Text-driven edits: s_y > s_F.
inline constexpr GuidanceWeights kTextPreset{6.0, 4.0, 8.0};
// Reference-driven edits: s_y < s_F.
inline constexpr GuidanceWeights kAppearancePreset{6.0, 4.0, 2.0};
// Models without text conditioning ignore the s_y term.
inline constexpr GuidanceWeights kUnconditionalPreset{6.0, 4.0, 0.0};

// Non-blocking hints mirroring the recommended s_S > s_F and s_y > s_F.
std::vector<std::string> guidance_hints(const GuidanceWeights& w);

enum class EditKind { appearance, shape, add, variation };

std::string to_string(EditKind kind);
EditKind edit_kind_from_string(const std::string& s);

enum class Combiner { factorized, joint };
std::string to_string(Combiner c);
Combiner combiner_from_string(const std::string& s);

struct ObjectRef {
  std::string scene;
  int object = 0;
  friend bool operator==(const ObjectRef&, const ObjectRef&) = default;
};

// Sampler overrides carried alongside an edit so every entry point runs the
// same schedule.
struct SamplerOverrides {
  std::optional<int> steps;
  std::optional<double> eta;
  std::optional<Combiner> combiner;
  friend bool operator==(const SamplerOverrides&, const SamplerOverrides&) = default;
};

struct EditSpec {
  EditKind kind = EditKind::variation;
  std::string scene;  // target scene id (service) or path (CLI)
  int target = 0;
  double a0 = 1.0;
  double a1 = 0.0;
  std::optional<double> lambda;
  std::optional<Mask> new_mask;
  std::optional<int> category;
  std::optional<ObjectRef> ref;
  std::uint64_t seed = 0;
  std::optional<Mask> region_mask;
  GuidanceWeights guidance;
  std::optional<std::string> prompt;
  SamplerOverrides sampler;

  friend bool operator==(const EditSpec&, const EditSpec&) = default;
};

// Raised for kind-specific incompleteness or out-of-range parameters.
class InvalidEditSpec : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Checks kind-specific completeness before execution.
void validate_edit_spec(const EditSpec& spec);

nlohmann::json edit_spec_to_json(const EditSpec& spec);
EditSpec edit_spec_from_json(const nlohmann::json& j);

// f′ = a₀·f + a₁·f^R, applied slot by slot to the target object.
SceneDescription edit_appearance(const SceneDescription& scene, int object_id,
                                 const SceneDescription& ref_scene, int ref_object_id, double a0,
                                 double a1);

// f′ = (1−λ)·f + λ·f^R.
SceneDescription interpolate_appearance(const SceneDescription& scene, int object_id,
                                        const SceneDescription& ref_scene, int ref_object_id,
                                        double lambda);

// Replaces the target mask. Claimed pixels leave their previous owners,
// vacated pixels go to the background object and emptied objects are removed.
SceneDescription edit_shape(const SceneDescription& scene, int object_id, const Mask& new_mask);

SceneDescription add_object(const SceneDescription& scene, const Mask& new_mask, int category,
                            const ObjectAppearance& appearance);
SceneDescription add_object(const SceneDescription& scene, const Mask& new_mask, int category,
                            const SceneDescription& ref_scene, int ref_object_id);

std::pair<SceneDescription, EditSpec> make_variation(const SceneDescription& scene, int object_id,
                                                     std::uint64_t seed);

// Index of the background object (category 0), if any.
std::optional<int> background_object(const SceneDescription& scene);

using SceneResolver = std::function<SceneDescription(const std::string&)>;

struct EditResult {
  SceneDescription scene;
  Mask region;  // where sampling may change pixels
};

// Applies `spec` to `scene`. The sampling region defaults to the union of the
// target's old and new masks (explicit region_mask wins). A prompt override
// replaces the scene caption.
EditResult apply_edit(const SceneDescription& scene, const EditSpec& spec,
                      const SceneResolver& resolve);

}  // namespace pairdiff
