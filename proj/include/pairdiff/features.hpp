#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

struct FeatureMap {
  Tensor3 values;
  std::string encoder_id;
  int layer = 0;
};

// Deterministic image encoder exposing per-block feature maps. Implementations
// must be stateless after construction so they can be shared across threads.
class FeatureEncoder {
 public:
  virtual ~FeatureEncoder() = default;
  virtual std::string id() const = 0;
  virtual std::vector<int> layers() const = 0;
  virtual int channels(int layer) const = 0;
  bool has_layer(int layer) const;

  // Throws InvalidArgument for a layer the encoder does not expose.
  FeatureMap extract(const Image& image, int layer) const;

 protected:
  virtual Tensor3 compute(const Image& image, int layer) const = 0;
};

// Layer 0 returns the image itself.
class IdentityEncoder final : public FeatureEncoder {
 public:
  std::string id() const override { return "identity"; }
  std::vector<int> layers() const override { return {0}; }
  int channels(int) const override { return 3; }

 protected:
  Tensor3 compute(const Image& image, int layer) const override;
};

// Layer l averages non-overlapping 2^l × 2^l blocks (layer 0 is the image).
class MeanPoolEncoder final : public FeatureEncoder {
 public:
  explicit MeanPoolEncoder(int max_layer = 3) : max_layer_(max_layer) {}
  std::string id() const override { return "meanpool"; }
  std::vector<int> layers() const override;
  int channels(int) const override { return 3; }

 protected:
  Tensor3 compute(const Image& image, int layer) const override;

 private:
  int max_layer_;
};

// Low-level encoder in the role of a VGG: three conv3×3+ReLU blocks with
// fixed seeded weights. Block 1 keeps full resolution; blocks 2 and 3 halve it.
class ConvEncoder final : public FeatureEncoder {
 public:
  explicit ConvEncoder(std::uint64_t seed = 17, std::array<int, 3> widths = {8, 16, 16});

  std::string id() const override { return "conv"; }
  std::vector<int> layers() const override { return {1, 2, 3}; }
  int channels(int layer) const override;

 protected:
  Tensor3 compute(const Image& image, int layer) const override;

 private:
  struct ConvLayer {
    int in = 0;
    int out = 0;
    int stride = 1;
    std::vector<float> weight;  // out × in × 3 × 3
    std::vector<float> bias;
  };
  static Tensor3 apply(const ConvLayer& layer, const Tensor3& input);

  std::array<ConvLayer, 3> blocks_;
};

// High-level encoder in the role of a ViT: 4×4 patch embedding followed by a
// stack of pre-norm single-head self-attention blocks with fixed seeded
// weights. Layer l is the token grid after block l, reshaped to dim×(H/4)×(W/4).
class PatchAttentionEncoder final : public FeatureEncoder {
 public:
  explicit PatchAttentionEncoder(std::uint64_t seed = 29, int dim = 16, int depth = 18,
                                 int patch = 4);

  std::string id() const override { return "patchattn"; }
  std::vector<int> layers() const override;
  int channels(int) const override { return dim_; }

 protected:
  Tensor3 compute(const Image& image, int layer) const override;

 private:
  struct Block {
    std::vector<float> wq, wk, wv, wo;  // dim × dim
    std::vector<float> w1, b1;          // hidden × dim, hidden
    std::vector<float> w2, b2;          // dim × hidden, dim
  };

  int dim_;
  int depth_;
  int patch_;
  int hidden_;
  std::vector<float> embed_w_;  // dim × (3·patch·patch)
  std::vector<float> embed_b_;
  std::vector<Block> blocks_;
};

// One (encoder, layer) slot of an appearance tuple.
struct LayerRef {
  std::string encoder_id;
  int layer = 0;
  friend bool operator==(const LayerRef&, const LayerRef&) = default;
};

// The (l₁, l₂, l₃) slots in ascending order of abstraction.
struct AppearanceConfig {
  std::array<LayerRef, 3> slots{LayerRef{"conv", 1}, LayerRef{"patchattn", 6},
                                LayerRef{"patchattn", 18}};
  friend bool operator==(const AppearanceConfig&, const AppearanceConfig&) = default;
};

nlohmann::json appearance_config_to_json(const AppearanceConfig& cfg);
AppearanceConfig appearance_config_from_json(const nlohmann::json& j);

// Registered encoders plus the configured appearance slots.
class EncoderBank {
 public:
  // Registers identity, meanpool, conv and patchattn with default seeds.
  explicit EncoderBank(AppearanceConfig config = {});

  void add(std::shared_ptr<const FeatureEncoder> encoder);
  const FeatureEncoder& get(const std::string& id) const;
  const AppearanceConfig& config() const { return config_; }
  // Channel count of each configured slot.
  std::array<int, 3> slot_channels() const;

 private:
  AppearanceConfig config_;
  std::map<std::string, std::shared_ptr<const FeatureEncoder>> encoders_;
};

}  // namespace pairdiff
