#pragma once

#include <vector>

#include "helpers.hpp"
#include "pairdiff/conditioning.hpp"
#include "pairdiff/diffusion.hpp"
#include "pairdiff/training.hpp"

namespace testutil {

// 8×8 pixel-space model small enough for unit tests.
inline ModelConfig tiny_config(DenoiserVariant variant = DenoiserVariant::input_concat, int resolution = 8) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.resolution = resolution;
  cfg.widths = {8, 16, 16};
  cfg.appearance_channels = {3, 3, 8};
  cfg.embed_dim = 16;
  return cfg;
}

inline DiffusionModel tiny_model(std::uint64_t seed = 0, DenoiserVariant variant = DenoiserVariant::input_concat) {
  init_torch_runtime();
  return make_model(tiny_config(variant), seed, NoiseSchedule(), std::make_shared<IdentityCodec>(), light_slots());
}

// 16×16 variant matching small generated datasets.
inline DiffusionModel tiny_model16(std::uint64_t seed = 0) {
  init_torch_runtime();
  return make_model(tiny_config(DenoiserVariant::input_concat, 16), seed, NoiseSchedule(),
                    std::make_shared<IdentityCodec>(), light_slots());
}

inline GeneratorConfig small_generator() {
  GeneratorConfig g;
  g.height = 16;
  g.width = 16;
  g.min_size = 2.5f;
  g.max_size = 5.0f;
  g.min_objects = 1;
  g.max_objects = 3;
  return g;
}

inline TrainingConfig tiny_training(std::uint64_t seed = 0) {
  TrainingConfig cfg;
  cfg.model = tiny_config();
  cfg.appearance = light_slots();
  cfg.batch_size = 4;
  cfg.seed = seed;
  return cfg;
}

inline std::vector<TrainingExample> tiny_pool(const DiffusionModel& model, int n, std::uint64_t seed) {
  Rng rng(seed);
  const EncoderBank bank(model.appearance);
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    auto scene = random_scene(rng, bank, 8, 8, 3);
    const Image img = random_image(rng, 8, 8);
    recompute_appearance(scene, img, bank);
    scene.caption = "A picture of red circle";
    out.push_back(make_example(img, scene, model));
  }
  return out;
}

inline ConditioningBundle tiny_bundle(const DiffusionModel& model, std::uint64_t seed) {
  return tiny_pool(model, 1, seed).front().bundle;
}

inline bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!torch::equal(pa[i], pb[i])) return false;
  }
  return true;
}

}  // namespace testutil
