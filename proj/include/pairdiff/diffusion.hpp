#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "pairdiff/conditioning.hpp"
#include "pairdiff/features.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

// Linear-β DDPM schedule. alpha_bar[0] = 1 (clean), alpha_bar[t] for t = 1…T.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

  int steps() const { return steps_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  int steps_;
  double beta_start_;
  double beta_end_;
  std::vector<double> alpha_bar_;
};

// z_t = √ᾱ_t·z₀ + √(1−ᾱ_t)·ε. `t` must lie in [0, T] (t = 0 returns z₀).
torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& schedule);

// Text hook: maps a caption to a fixed-length vector; the empty caption must
// map to zeros.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual std::vector<float> encode(const std::string& text) const = 0;
};

// Multi-hot bag of words over a closed vocabulary (case-insensitive).
class BagOfWordsText final : public TextEncoder {
 public:
  explicit BagOfWordsText(std::vector<std::string> vocabulary);
  // Category names plus palette colour names.
  static std::vector<std::string> default_vocabulary();

  int dim() const override { return static_cast<int>(vocabulary_.size()); }
  std::vector<float> encode(const std::string& text) const override;
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

 private:
  std::vector<std::string> vocabulary_;
};

enum class DenoiserVariant { input_concat, control };
std::string to_string(DenoiserVariant v);
DenoiserVariant denoiser_variant_from_string(const std::string& s);

struct ModelConfig {
  DenoiserVariant variant = DenoiserVariant::input_concat;
  int latent_channels = 3;
  int resolution = 32;
  std::array<int, 3> widths{32, 64, 128};
  std::array<int, 3> appearance_channels{8, 16, 16};
  int embed_dim = 128;
  std::vector<std::string> vocabulary = BagOfWordsText::default_vocabulary();

  // Channels consumed by the first convolution of the input-concat variant:
  // latent + S (2) + Σ(C_l + 2) + one presence flag per stream (3).
  int input_concat_channels() const;
  ConditioningShape conditioning_shape() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Batched, φ-resolved conditioning in tensor form.
struct ConditioningBatch {
  torch::Tensor structure;                // B×2×H×W
  std::vector<torch::Tensor> appearance;  // 3 × (B×(C_l+2)×H×W)
  torch::Tensor text;                     // B×V
  torch::Tensor present;                  // B×3

  int64_t size() const { return present.size(0); }
};

ConditioningBatch make_conditioning_batch(const std::vector<NumericConditioning>& items, const TextEncoder& text);
ConditioningBatch encode_bundles(const std::vector<ConditioningBundle>& bundles, const ModelConfig& cfg,
                                 const TextEncoder& text);

// ε_θ(z_t, S, F, y, t).
class DenoiserModelImpl : public torch::nn::Module {
 public:
  virtual torch::Tensor predict(const torch::Tensor& z_t, const ConditioningBatch& cond, const torch::Tensor& t) = 0;
  virtual const ModelConfig& config() const = 0;
  int64_t parameter_count() const;
};

// Conditioning tensors concatenated to the noisy latent at the input.
class InputConcatUNet;
// Unconditional base UNet plus a control branch fed through zero-initialized
// projections, so the branch is a no-op at initialization.
class ControlUNet;

std::shared_ptr<DenoiserModelImpl> make_denoiser(const ModelConfig& cfg);

// Maps images to the space the diffusion model operates in.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual std::string id() const = 0;
  virtual int latent_channels() const = 0;
  virtual int downsample() const = 0;
  // images: B×3×H×W in [0,1].
  virtual torch::Tensor encode(const torch::Tensor& images) const = 0;
  virtual torch::Tensor decode(const torch::Tensor& latents) const = 0;
  // Range that clean latents occupy, used to clip denoised estimates.
  virtual std::optional<std::pair<double, double>> latent_range() const { return std::nullopt; }
};

class IdentityCodec final : public LatentCodec {
 public:
  std::string id() const override { return "identity"; }
  int latent_channels() const override { return 3; }
  int downsample() const override { return 1; }
  torch::Tensor encode(const torch::Tensor& images) const override { return images; }
  torch::Tensor decode(const torch::Tensor& latents) const override { return latents; }
  std::optional<std::pair<double, double>> latent_range() const override { return std::pair{0.0, 1.0}; }
};

struct AutoencoderNetImpl : torch::nn::Module {
  AutoencoderNetImpl(int latent_channels = 4, int width = 32);
  torch::Tensor encode(const torch::Tensor& x);
  torch::Tensor decode(const torch::Tensor& z);

  torch::nn::Sequential encoder{nullptr};
  torch::nn::Sequential decoder{nullptr};
};
TORCH_MODULE(AutoencoderNet);

// 2× downsampling convolutional autoencoder; latents are divided by a scale
// factor fitted after training so they have roughly unit variance.
class AutoencoderCodec final : public LatentCodec {
 public:
  explicit AutoencoderCodec(int latent_channels = 4, int width = 32);

  std::string id() const override { return "autoencoder"; }
  int latent_channels() const override { return latent_channels_; }
  int downsample() const override { return 2; }
  torch::Tensor encode(const torch::Tensor& images) const override;
  torch::Tensor decode(const torch::Tensor& latents) const override;

  AutoencoderNet& net() { return net_; }
  const AutoencoderNet& net() const { return net_; }
  double scale() const { return scale_; }
  void set_scale(double s) { scale_ = s; }
  int width() const { return width_; }
  std::optional<std::pair<double, double>> latent_range() const override { return range_; }
  void set_latent_range(std::optional<std::pair<double, double>> r) { range_ = r; }

 private:
  int latent_channels_;
  int width_;
  mutable AutoencoderNet net_;
  double scale_ = 1.0;
  std::optional<std::pair<double, double>> range_;
};

// {"type": "identity"} or {"type": "autoencoder", latent_channels, width, scale, range?}.
std::shared_ptr<LatentCodec> make_codec(const nlohmann::json& cfg);
nlohmann::json codec_to_json(const LatentCodec& codec);

// Everything needed to run inference: denoiser, schedule, codec, text
// embedding and the appearance slots the denoiser was trained with.
struct DiffusionModel {
  std::shared_ptr<DenoiserModelImpl> net;
  NoiseSchedule schedule;
  std::shared_ptr<LatentCodec> codec = std::make_shared<IdentityCodec>();
  std::shared_ptr<TextEncoder> text;
  AppearanceConfig appearance;

  const ModelConfig& config() const { return net->config(); }
  int image_resolution() const { return config().resolution * codec->downsample(); }
};

DiffusionModel make_model(const ModelConfig& cfg, std::uint64_t seed, const NoiseSchedule& schedule = NoiseSchedule(),
                          std::shared_ptr<LatentCodec> codec = std::make_shared<IdentityCodec>(),
                          const AppearanceConfig& appearance = {});

// Standard normal tensor drawn element-wise from `rng` in row-major order.
torch::Tensor gaussian(at::IntArrayRef shape, Rng& rng);

// Single-threaded intra-op execution so results are reproducible run to run.
void init_torch_runtime();

torch::Tensor image_to_tensor(const Image& image);  // 1×3×H×W
Image tensor_to_image(const torch::Tensor& t);      // accepts 1×3×H×W or 3×H×W; clamps to [0,1]
torch::Tensor tensor3_to_torch(const Tensor3& t);   // C×H×W
torch::Tensor mask_to_tensor(const Mask& m);        // 1×1×H×W float

}  // namespace pairdiff
