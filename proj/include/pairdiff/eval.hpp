#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairdiff/diffusion.hpp"
#include "pairdiff/editops.hpp"
#include "pairdiff/metrics.hpp"
#include "pairdiff/sampler.hpp"
#include "pairdiff/shapes.hpp"

namespace pairdiff {

// Driver patch bilinearly resized to the region's bounding box and pasted
// under the region mask.
Image baseline_copy_paste(const Image& input, const Mask& region, const Image& driver);

// Masked resampling of the region conditioned on structure and text only.
Image baseline_inpaint(const DiffusionModel& model, const Image& input, const SceneDescription& scene,
                       const Mask& region, const GuidanceWeights& w, const SamplerConfig& cfg);

// Copy-paste, DDIM inversion of the pasted image, then masked resampling from
// the inverted latent (structure and text conditioning).
Image baseline_cp_denoise(const DiffusionModel& model, const Image& input, const SceneDescription& scene,
                          const Mask& region, const Image& driver, const GuidanceWeights& w,
                          const SamplerConfig& cfg);

// Appearance tuple of a driver patch: the patch is resized to the model's
// image resolution and pooled as a single full-image object.
ObjectAppearance patch_appearance(const Image& patch, const EncoderBank& bank, int resolution);

// Reference-driven appearance edit of one object (f′ = f^R) with masked
// sampling inside the object mask.
Image appearance_swap(const DiffusionModel& model, const Image& input, const SceneDescription& scene, int object,
                      const ObjectAppearance& reference, const GuidanceWeights& w, const SamplerConfig& cfg,
                      const std::optional<std::string>& prompt = std::nullopt);

struct AppearancePair {
  int target_index = 0;   // dataset sample holding the edited object
  int target_object = 0;  // object id in the target scene
  int driver_index = 0;   // dataset sample the driver patch comes from
  Box driver_box;         // patch inside a driver object's bounding box
};

// Seeded pairs: a random non-background target object, and a random
// axis-aligned patch covering 25–75% of the bounding box of a random
// non-background object in a different sample.
std::vector<AppearancePair> make_appearance_pairs(const DatasetManifest& manifest, const std::vector<int>& indices,
                                                  int n, std::uint64_t seed);

struct MetricReport {
  std::string method;
  std::optional<double> fid;
  std::optional<double> l1;
  std::optional<double> ssim;
  std::optional<double> miou;
  std::optional<double> lpips;
  int n = 0;
  bool fid_regularized = false;
};

struct BenchmarkConfig {
  int pairs = 20;
  std::uint64_t seed = 0;
  int split = 2;  // test split
  SamplerConfig sampler;
  GuidanceWeights guidance = kAppearancePreset;
  std::string backend = "desk";
  bool baselines = true;

  // Stable description of every setting that influences the numbers.
  nlohmann::json fingerprint() const;
};

inline constexpr const char* kCopyPasteMethod = "copy_paste_upper_bound";

std::vector<MetricReport> run_appearance_benchmark(const DiffusionModel& model, const DatasetManifest& manifest,
                                                   const BenchmarkConfig& cfg);

// Columns: method, fid, l1, ssim, miou, lpips, n. Missing values are empty.
std::string report_csv(const std::vector<MetricReport>& reports);
nlohmann::json report_json(const std::vector<MetricReport>& reports, const BenchmarkConfig& cfg);

}  // namespace pairdiff
