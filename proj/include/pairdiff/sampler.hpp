#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "pairdiff/conditioning.hpp"
#include "pairdiff/diffusion.hpp"
#include "pairdiff/editops.hpp"
#include "pairdiff/rng.hpp"

namespace pairdiff {

struct SamplerConfig {
  int steps = 20;
  double eta = 0.0;
  std::uint64_t seed = 0;
  Combiner combiner = Combiner::factorized;
  // Clip denoised estimates to the codec's latent range at every step.
  bool clip_denoised = true;

  void validate(const NoiseSchedule& schedule) const;
};

// ε̃ = e0 + s_S(eS−e0) + s_F(eSF−eS) + s_y(ey−e0)
torch::Tensor cfg_combine_factorized(const torch::Tensor& e0, const torch::Tensor& eS, const torch::Tensor& eSF,
                                     const torch::Tensor& ey, const GuidanceWeights& w);
// ε̃ = e0 + s_S(eS−e0) + s_F(eSF−eS) + s_y(eSFy−eSF)
torch::Tensor cfg_combine_joint(const torch::Tensor& e0, const torch::Tensor& eS, const torch::Tensor& eSF,
                                const torch::Tensor& eSFy, const GuidanceWeights& w);

// The four raw predictions and their combination. `last` is ε(φ,φ,y) for the
// factorized combiner and ε(S,F,y) for the joint one.
struct GuidedPrediction {
  torch::Tensor e0, eS, eSF, last, combined;
};

// Evaluates the four conditioning subsets of `bundle` in one batch of four.
GuidedPrediction guided_prediction(const DiffusionModel& model, const torch::Tensor& z_t,
                                   const ConditioningBundle& bundle, const GuidanceWeights& w, Combiner combiner,
                                   int t);

// DDIM subsequence t_1 < … < t_steps = T with t_k = round(k·T/steps).
std::vector<int> ddim_timesteps(int steps, int total);

// One DDIM update. With `clip`, the denoised estimate is clamped and ε is
// re-derived from it before stepping.
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps, int t, int t_prev,
                        const NoiseSchedule& schedule, double eta, Rng& rng,
                        const std::optional<std::pair<double, double>>& clip = std::nullopt);

using ProgressFn = std::function<void(int done, int total)>;

// Optional masked mode: `region` is 1×1×h×w at latent resolution (1 = resample,
// fractions blend)
// and `original` the encoded original latent. Returns the final latent.
torch::Tensor sample_latent(const DiffusionModel& model, const ConditioningBundle& bundle, const GuidanceWeights& w,
                            const SamplerConfig& cfg, const std::optional<torch::Tensor>& region = std::nullopt,
                            const std::optional<torch::Tensor>& original = std::nullopt,
                            const std::optional<torch::Tensor>& initial_noise = std::nullopt,
                            const ProgressFn& progress = {});

// sample_latent followed by decoding. Region masks are given at image
// resolution and reduced to the latent grid by latent_region.
Image sample(const DiffusionModel& model, const ConditioningBundle& bundle, const GuidanceWeights& w,
             const SamplerConfig& cfg, const std::optional<Mask>& region = std::nullopt,
             const std::optional<Image>& original = std::nullopt, const ProgressFn& progress = {});

// Deterministic reverse recurrence z_0 → z_T. Requires cfg.eta == 0. The
// recurrence never clips, so reconstructions should sample with
// clip_denoised off to retrace it.
torch::Tensor ddim_invert(const DiffusionModel& model, const torch::Tensor& z0, const ConditioningBundle& bundle,
                          const GuidanceWeights& w, const SamplerConfig& cfg);

// Image-resolution mask reduced to the latent grid of `model`: each latent
// cell holds the fraction of its pixels inside the mask, so cells straddling
// the boundary are blended rather than fully resampled.
torch::Tensor latent_region(const DiffusionModel& model, const Mask& region);

}  // namespace pairdiff
