#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pairdiff/features.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff {

// Mean absolute difference over pixels (all channels) outside `region`.
double l1_locality(const Image& original, const Image& edited, const Mask& region);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over channels with a Gaussian window, truncated and renormalized
// at the borders.
double ssim(const Tensor3& a, const Tensor3& b, const SsimParams& params = {});

// Bilinear resize (half-pixel centres, edge clamped).
Tensor3 resize_bilinear(const Tensor3& src, int height, int width);

// SSIM between a driver patch and an edited region: the driver is resized to
// the region's size; both are upscaled to at least 8×8 when smaller.
double ssim_faithfulness(const Image& driver_region, const Image& edited_region, const SsimParams& params = {});

// Bounding box [top, bottom) × [left, right) of a non-empty mask.
struct Box {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;
  int height() const { return bottom - top; }
  int width() const { return right - left; }
};
Box mask_bbox(const Mask& mask);
Image crop(const Image& image, const Box& box);

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string id() const = 0;
  virtual std::vector<float> embed(const Image& image) const = 0;
  virtual std::vector<Tensor3> feature_maps(const Image& image) const = 0;
};

// Flattened pixels; feature map is the image itself.
class IdentityEmbedding final : public EmbeddingBackend {
 public:
  std::string id() const override { return "identity"; }
  std::vector<float> embed(const Image& image) const override;
  std::vector<Tensor3> feature_maps(const Image& image) const override;
};

// FID-like / LPIPS-like backend built on the desk conv encoder: embedding is
// the global mean of its deepest block, feature maps are all three blocks.
class DeskEmbedding final : public EmbeddingBackend {
 public:
  DeskEmbedding() = default;
  std::string id() const override { return "desk"; }
  std::vector<float> embed(const Image& image) const override;
  std::vector<Tensor3> feature_maps(const Image& image) const override;

 private:
  ConvEncoder encoder_;
};

std::shared_ptr<const EmbeddingBackend> make_embedding_backend(const std::string& id);

struct FidResult {
  double value = 0.0;
  bool regularized = false;  // covariance product needed the 1e−6·I fallback
};

// Fréchet distance between Gaussian fits of two embedding sets.
FidResult fid_from_embeddings(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b);
FidResult fid(const std::vector<Image>& a, const std::vector<Image>& b, const EmbeddingBackend& backend);

// Mean over categories present in gt of |pred ∩ gt| / |pred ∪ gt|.
double miou(const Grid<int>& pred, const Grid<int>& gt);

double lpips_like(const Image& a, const Image& b, const EmbeddingBackend& backend);

// Category map of an image by nearest reference colour: each pixel takes the
// category of the object whose colour is closest.
Grid<int> color_segment(const Image& image, const std::vector<std::array<float, 3>>& colors,
                        const std::vector<int>& categories);

// Mean RGB over a mask.
std::array<float, 3> mean_color(const Image& image, const Mask& mask);
double color_distance(const std::array<float, 3>& a, const std::array<float, 3>& b);

}  // namespace pairdiff
