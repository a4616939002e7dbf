#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pairdiff/rng.hpp"
#include "pairdiff/scene.hpp"
#include "pairdiff/shapes.hpp"
#include "pairdiff/tensor.hpp"

namespace testutil {

using namespace pairdiff;

inline Tensor3 random_tensor(Rng& rng, int c, int h, int w) {
  Tensor3 t(c, h, w);
  for (auto& v : t.values) v = static_cast<float>(rng.normal());
  return t;
}

inline Image random_image(Rng& rng, int h, int w) {
  Image img(h, w);
  for (auto& v : img.pixels.values) v = static_cast<float>(rng.uniform());
  return img;
}

inline Mask random_mask(Rng& rng, int h, int w, double p = 0.5) {
  Mask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(p) ? 1 : 0;
  if (mask_empty(m)) m[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(m.size()) - 1))] = 1;
  return m;
}

// Voronoi partition of an h×w grid into up to n instances with contiguous ids
// and random categories.
inline PanopticMap random_partition(Rng& rng, int h, int w, int n, int num_categories = 4) {
  std::vector<std::pair<int, int>> seeds;
  for (int i = 0; i < n; ++i) {
    seeds.emplace_back(static_cast<int>(rng.uniform_int(0, h - 1)), static_cast<int>(rng.uniform_int(0, w - 1)));
  }
  Grid<int> raw(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      long bd = -1;
      for (int i = 0; i < n; ++i) {
        const long d = static_cast<long>(y - seeds[i].first) * (y - seeds[i].first) +
                       static_cast<long>(x - seeds[i].second) * (x - seeds[i].second);
        if (bd < 0 || d < bd) {
          bd = d;
          best = i;
        }
      }
      raw(y, x) = best;
    }
  }
  std::vector<int> relabel(static_cast<std::size_t>(n), -1);
  std::vector<int> cats;
  int next = 0;
  PanopticMap map{Grid<int>(h, w), Grid<int>(h, w)};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    int& r = relabel[static_cast<std::size_t>(raw[i])];
    if (r < 0) {
      r = next++;
      cats.push_back(static_cast<int>(rng.uniform_int(0, num_categories - 1)));
    }
    map.instance[i] = r;
    map.category[i] = cats[static_cast<std::size_t>(r)];
  }
  return map;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pairdiff_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Cheap full-resolution slots for tests that do not care about the encoders.
inline AppearanceConfig light_slots() {
  return AppearanceConfig{{LayerRef{"identity", 0}, LayerRef{"meanpool", 1}, LayerRef{"conv", 1}}};
}

// Random image partitioned into n Voronoi objects; category 0 is forced on
// instance 0 so a background object exists.
inline SceneDescription random_scene(Rng& rng, const EncoderBank& bank, int h = 16, int w = 16, int n = 4) {
  const Image img = random_image(rng, h, w);
  PanopticMap map = random_partition(rng, h, w, n);
  for (std::size_t i = 0; i < map.instance.size(); ++i) {
    if (map.instance[i] == 0) map.category[i] = 0;
    else if (map.category[i] == 0) map.category[i] = 1;
  }
  return build_scene(img, map, bank);
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace testutil
