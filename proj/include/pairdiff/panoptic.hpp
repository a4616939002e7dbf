#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "pairdiff/tensor.hpp"

namespace pairdiff {

// Per-pixel category and instance labels.
struct PanopticMap {
  Grid<int> category;
  Grid<int> instance;

  int height() const { return instance.height(); }
  int width() const { return instance.width(); }
  int num_instances() const;

  friend bool operator==(const PanopticMap&, const PanopticMap&) = default;
};

// Throws PartitionViolation describing the first broken invariant: shapes
// differ, instance ids not contiguous 0…n−1, or an instance spans more than
// one category.
void validate_partition(const PanopticMap& map);

// Binary mask of a single instance.
Mask instance_mask(const PanopticMap& map, int instance_id);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::string id() const = 0;
  virtual PanopticMap segment(const Image& image) const = 0;
};

// Ground-truth lookup keyed by the 8-bit content of an image. The synthetic
// generator registers every scene it renders; uniform images that were never
// registered resolve to a single background instance.
class OracleSegmenter final : public Segmenter {
 public:
  std::string id() const override { return "oracle"; }
  PanopticMap segment(const Image& image) const override;

  void add(const Image& image, PanopticMap map);
  // Registers every sample of a generated dataset directory.
  void add_dataset(const std::filesystem::path& root);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::uint64_t, PanopticMap> truth_;
};

// Adapter for a user-supplied segmenter. Either an in-process callback, or
// an executable invoked as `<command> <input.png> <output.json>` that writes
// {"height":H,"width":W,"category":[…],"instance":[…]} in row-major order.
class ExternalSegmenter final : public Segmenter {
 public:
  using Callback = std::function<PanopticMap(const Image&)>;

  explicit ExternalSegmenter(Callback callback) : callback_(std::move(callback)) {}
  explicit ExternalSegmenter(std::string command) : command_(std::move(command)) {}

  std::string id() const override { return "external"; }
  PanopticMap segment(const Image& image) const override;

 private:
  Callback callback_;
  std::string command_;
};

class SegmenterRegistry {
 public:
  // Registers the built-in oracle backend.
  SegmenterRegistry();

  void add(std::shared_ptr<Segmenter> segmenter);
  bool contains(const std::string& id) const;
  OracleSegmenter& oracle();

  // Runs the named backend and validates that its output is a partition of
  // the image.
  PanopticMap segment(const Image& image, const std::string& backend) const;

 private:
  std::shared_ptr<OracleSegmenter> oracle_;
  std::map<std::string, std::shared_ptr<Segmenter>> backends_;
};

std::uint64_t image_fingerprint(const Image& image);

PanopticMap panoptic_from_json(const std::string& text);

}  // namespace pairdiff
