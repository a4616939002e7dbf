#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pairdiff/features.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/scene.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

inline constexpr float kSplatEpsilon = 1e-8f;

// 2×H×W: channel 0 category / (K−1), channel 1 (instance+1) / n.
struct StructureTensor {
  Tensor3 values;
  friend bool operator==(const StructureTensor&, const StructureTensor&) = default;
};

// (C+2)×H×W: the L2-normalized appearance vector of each object splatted over
// its mask, followed by the two structure channels.
struct AppearanceTensor {
  Tensor3 values;
  std::string encoder_id;
  int layer = 0;
  int feature_channels() const { return values.channels - 2; }
  friend bool operator==(const AppearanceTensor&, const AppearanceTensor&) = default;
};

// Conditioning c = (S, F_s, y). An empty optional is the null marker φ of
// that stream. Appearance is never present without structure.
struct ConditioningBundle {
  std::optional<StructureTensor> structure;
  std::optional<std::vector<AppearanceTensor>> appearance;
  std::optional<std::string> text;

  // Throws InvalidArgument when appearance is set without structure or when
  // tensor resolutions disagree.
  void validate() const;
  int height() const;
  int width() const;

  friend bool operator==(const ConditioningBundle&, const ConditioningBundle&) = default;
};

struct DropoutConfig {
  double p_structure = 0.1;
  double p_appearance = 0.1;
  double p_text = 0.1;
  void validate() const;
};

// Resolution 0 means "the scene's own resolution".
StructureTensor build_structure_tensor(const SceneDescription& scene, int height = 0, int width = 0);

// Inverse of build_structure_tensor: recovers the (category, instance) map.
PanopticMap decode_structure_tensor(const StructureTensor& s, int num_categories, int num_objects);

AppearanceTensor splat_appearance(const SceneDescription& scene, const LayerRef& slot,
                                  int height = 0, int width = 0);

// Auto caption used when the scene carries none.
std::string auto_caption(const SceneDescription& scene);

ConditioningBundle assemble_conditioning(const SceneDescription& scene, const AppearanceConfig& cfg,
                                         int height = 0, int width = 0);

ConditioningBundle apply_dropout(ConditioningBundle bundle, const DropoutConfig& cfg, Rng& rng);

// Bundle with only the selected streams kept.
ConditioningBundle select_streams(const ConditioningBundle& bundle, bool structure, bool appearance,
                                  bool text);

// Numeric shape of a conditioning stream set, needed to encode φ.
struct ConditioningShape {
  int height = 0;
  int width = 0;
  std::array<int, 3> appearance_channels{};  // C per slot, without the +2
};

// φ-resolved numeric form: zeros stand in for null streams and `present`
// records which streams were genuinely supplied (structure, appearance, text).
struct NumericConditioning {
  Tensor3 structure;
  std::vector<Tensor3> appearance;
  std::string text;
  std::array<float, 3> present{};
};

NumericConditioning encode_null(const ConditioningBundle& bundle, const ConditioningShape& shape);

}  // namespace pairdiff
