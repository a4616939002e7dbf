#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "pairdiff/conditioning.hpp"
#include "pairdiff/diffusion.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/rng.hpp"
#include "pairdiff/shapes.hpp"

namespace pairdiff {

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

struct TrainingConfig {
  double learning_rate = 5e-4;
  int batch_size = 16;
  int steps = 2000;
  DropoutConfig dropout;
  std::uint64_t seed = 0;
  ModelConfig model;
  nlohmann::json schedule = NoiseSchedule().to_json();
  nlohmann::json codec = {{"type", "identity"}};
  AppearanceConfig appearance;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

// One training pair: the clean latent and the full conditioning bundle built
// at latent resolution.
struct TrainingExample {
  torch::Tensor z0;  // C×h×w
  ConditioningBundle bundle;
};

TrainingExample make_example(const Image& image, const SceneDescription& scene, const DiffusionModel& model);

// Examples for the given dataset indices using the oracle ground truth.
std::vector<TrainingExample> prepare_examples(const DatasetManifest& manifest, const std::vector<int>& indices,
                                              const DiffusionModel& model, const EncoderBank& bank);

// Noise-prediction MSE for a batch. Consumes from `rng`: per example one
// timestep, three dropout draws and the latent-sized noise, in batch order.
torch::Tensor diffusion_loss(const DiffusionModel& model, const std::vector<const TrainingExample*>& batch,
                             const DropoutConfig& dropout, Rng& rng);

// diffusion_loss plus one optimizer update. Throws TrainingDiverged (without
// updating) when the loss is not finite.
double training_step(const DiffusionModel& model, torch::optim::Optimizer& optimizer,
                     const std::vector<const TrainingExample*>& batch, const DropoutConfig& dropout, Rng& rng);

// Owns the model, optimizer and RNG; checkpoints capture all three.
class Trainer {
 public:
  explicit Trainer(TrainingConfig cfg, std::shared_ptr<LatentCodec> codec = nullptr);

  const TrainingConfig& config() const { return cfg_; }
  DiffusionModel& model() { return model_; }
  const DiffusionModel& model() const { return model_; }
  torch::optim::Adam& optimizer() { return *optimizer_; }
  int step() const { return step_; }
  Rng& rng() { return rng_; }

  // Draws a batch uniformly from `pool` and performs one update.
  double step(const std::vector<TrainingExample>& pool);
  std::vector<double> run(const std::vector<TrainingExample>& pool, int steps,
                          const std::function<void(int step, double loss)>& log = {});

  void save(const std::filesystem::path& path) const;
  static Trainer resume(const std::filesystem::path& path);

 private:
  TrainingConfig cfg_;
  DiffusionModel model_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  Rng rng_;
  int step_ = 0;
};

// Checkpoint container: magic, format version, JSON header and named
// little-endian float32 blobs.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::json header;
  std::vector<std::pair<std::string, torch::Tensor>> blobs;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
// Throws CorruptCheckpoint on malformed or truncated input and
// VersionMismatch on an unknown format version.
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Model-only save/load. Loading also accepts trainer checkpoints.
void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path);
DiffusionModel load_checkpoint(const std::filesystem::path& path);

// FNV-1a of the checkpoint bytes, hex encoded.
std::string checkpoint_fingerprint(const std::filesystem::path& path);

// Trains the autoencoder codec on images (B×3×H×W in [0,1]) with MSE and
// fits its latent scale; returns per-step losses.
std::vector<double> train_autoencoder(AutoencoderCodec& codec, const torch::Tensor& images, int steps,
                                      int batch_size, double learning_rate, std::uint64_t seed);

}  // namespace pairdiff
