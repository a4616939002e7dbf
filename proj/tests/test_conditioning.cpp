#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "pairdiff/conditioning.hpp"
#include "pairdiff/error.hpp"

using namespace pairdiff;
using namespace testutil;

namespace {

double norm_at(const Tensor3& t, int channels, int y, int x) {
  double sq = 0;
  for (int c = 0; c < channels; ++c) sq += static_cast<double>(t.at(c, y, x)) * t.at(c, y, x);
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("structure tensor encodes category and instance and decodes back") {
  Rng rng(1);
  const EncoderBank bank(light_slots());
  for (int i = 0; i < 20; ++i) {
    const auto scene = random_scene(rng, bank, 12, 14, 1 + static_cast<int>(rng.uniform_int(0, 6)));
    const auto s = build_structure_tensor(scene);
    REQUIRE(s.values.channels == 2);
    const auto back = decode_structure_tensor(s, static_cast<int>(scene.categories.size()), scene.num_objects());
    CHECK(back == scene_panoptic(scene));
    for (int id = 0; id < scene.num_objects(); ++id) {
      const auto& o = scene.objects[static_cast<std::size_t>(id)];
      for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 14; ++x) {
          if (!o.structure.mask(y, x)) continue;
          CHECK(s.values.at(0, y, x) == doctest::Approx(o.structure.category / 3.0));
          CHECK(s.values.at(1, y, x) == doctest::Approx((id + 1.0) / scene.num_objects()));
        }
      }
    }
  }
}

TEST_CASE("splatted positions have unit norm and pooling recovers the normalized vector") {
  Rng rng(2);
  const EncoderBank bank;
  double worst_norm = 0, worst_pool = 0, worst_resplat = 0;
  for (int i = 0; i < 50; ++i) {
    auto scene = random_scene(rng, bank, 32, 32, 1 + static_cast<int>(rng.uniform_int(0, 5)));
    for (const auto& slot : bank.config().slots) {
      const auto a = splat_appearance(scene, slot);
      const int c = a.feature_channels();
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) worst_norm = std::max(worst_norm, std::abs(norm_at(a.values, c, y, x) - 1.0));
      }
      // Pool the splatted map back per object, write it in as the new
      // appearance and splat again.
      Tensor3 feat(c, 32, 32);
      std::copy(a.values.values.begin(), a.values.values.begin() + static_cast<long>(feat.values.size()),
                feat.values.begin());
      SceneDescription again = scene;
      for (int id = 0; id < scene.num_objects(); ++id) {
        auto& obj = again.objects[static_cast<std::size_t>(id)];
        const auto g = pool_appearance(FeatureMap{feat, slot.encoder_id, slot.layer}, obj.structure.mask);
        for (auto& layer : obj.appearance.layers) {
          if (layer.encoder_id != slot.encoder_id || layer.layer != slot.layer) continue;
          double n = 0;
          for (float v : layer.values) n += static_cast<double>(v) * v;
          n = std::max(std::sqrt(n), 1e-8);
          for (std::size_t k = 0; k < g.values.size(); ++k) {
            worst_pool = std::max(worst_pool, std::abs(g.values[k] - layer.values[k] / n));
          }
          layer.values = g.values;
        }
      }
      const auto b = splat_appearance(again, slot);
      worst_resplat = std::max(worst_resplat, max_abs_diff(a.values.values, b.values.values));
    }
  }
  CHECK(worst_norm <= 1e-6);
  CHECK(worst_pool <= 1e-6);
  CHECK(worst_resplat <= 1e-6);
}

TEST_CASE("zero appearance vector splats to zeros") {
  Rng rng(3);
  const EncoderBank bank(light_slots());
  auto scene = random_scene(rng, bank, 8, 8, 2);
  for (auto& v : scene.objects[0].appearance.layers[0].values) v = 0.0f;
  const auto a = splat_appearance(scene, bank.config().slots[0]);
  const auto& m = scene.objects[0].structure.mask;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      if (m(y, x)) CHECK(norm_at(a.values, 3, y, x) == 0.0);
    }
  }
}

TEST_CASE("appearance tensor carries the structure channels") {
  Rng rng(4);
  const EncoderBank bank(light_slots());
  const auto scene = random_scene(rng, bank, 16, 16, 3);
  const auto s = build_structure_tensor(scene, 8, 8);
  const auto a = splat_appearance(scene, bank.config().slots[2], 8, 8);
  REQUIRE(a.values.channels == 8 + 2);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      CHECK(a.values.at(8, y, x) == s.values.at(0, y, x));
      CHECK(a.values.at(9, y, x) == s.values.at(1, y, x));
    }
  }
}

TEST_CASE("assemble_conditioning uses the caption or an auto caption") {
  Rng rng(5);
  const EncoderBank bank(light_slots());
  auto scene = random_scene(rng, bank, 16, 16, 3);
  scene.caption = "A picture of red circle";
  auto b = assemble_conditioning(scene, bank.config(), 8, 8);
  CHECK(*b.text == "A picture of red circle");
  CHECK(b.height() == 8);
  REQUIRE(b.appearance->size() == 3);
  scene.caption.reset();
  b = assemble_conditioning(scene, bank.config());
  CHECK(b.text->rfind("A picture of ", 0) == 0);
  CHECK(b.height() == 16);
  CHECK_NOTHROW(b.validate());
}

TEST_CASE("bundle validation rejects appearance without structure") {
  Rng rng(6);
  const EncoderBank bank(light_slots());
  auto b = assemble_conditioning(random_scene(rng, bank), bank.config());
  b.structure.reset();
  CHECK_THROWS_AS(b.validate(), InvalidArgument);
}

TEST_CASE("dropout rates match the configured probabilities") {
  Rng gen(7);
  const EncoderBank bank(light_slots());
  const auto full = assemble_conditioning(random_scene(gen, bank, 8, 8, 2), bank.config());
  Rng rng(123);
  const DropoutConfig cfg;
  int drop_s = 0, drop_y = 0, kept_s = 0, drop_f_given_s = 0, drop_f = 0, orphan = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto b = apply_dropout(full, cfg, rng);
    drop_s += !b.structure;
    drop_y += !b.text;
    drop_f += !b.appearance;
    if (b.structure) {
      ++kept_s;
      drop_f_given_s += !b.appearance;
    }
    orphan += b.appearance && !b.structure;
  }
  CHECK(drop_s / double(n) >= 0.08);
  CHECK(drop_s / double(n) <= 0.12);
  CHECK(drop_y / double(n) >= 0.08);
  CHECK(drop_y / double(n) <= 0.12);
  CHECK(drop_f_given_s / double(kept_s) >= 0.08);
  CHECK(drop_f_given_s / double(kept_s) <= 0.12);
  CHECK(drop_f / double(n) == doctest::Approx(0.19).epsilon(0.15));
  CHECK(orphan == 0);
}

TEST_CASE("dropout extremes") {
  Rng gen(8);
  const EncoderBank bank(light_slots());
  const auto full = assemble_conditioning(random_scene(gen, bank, 8, 8, 2), bank.config());
  Rng rng(9);
  CHECK(apply_dropout(full, DropoutConfig{0, 0, 0}, rng) == full);
  const auto none = apply_dropout(full, DropoutConfig{1, 1, 1}, rng);
  CHECK(!none.structure);
  CHECK(!none.appearance);
  CHECK(!none.text);
  CHECK_THROWS_AS(apply_dropout(full, DropoutConfig{1.5, 0, 0}, rng), InvalidArgument);
}

TEST_CASE("dropout consumes three draws regardless of outcome") {
  Rng gen(10);
  const EncoderBank bank(light_slots());
  const auto full = assemble_conditioning(random_scene(gen, bank, 8, 8, 2), bank.config());
  Rng a(5), b(5);
  apply_dropout(full, DropoutConfig{1, 1, 1}, a);
  for (int i = 0; i < 3; ++i) b.uniform();
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("select_streams never keeps appearance without structure") {
  Rng gen(11);
  const EncoderBank bank(light_slots());
  const auto full = assemble_conditioning(random_scene(gen, bank, 8, 8, 2), bank.config());
  for (int mask = 0; mask < 8; ++mask) {
    const auto b = select_streams(full, mask & 1, mask & 2, mask & 4);
    CHECK(b.structure.has_value() == bool(mask & 1));
    CHECK(b.appearance.has_value() == ((mask & 1) && (mask & 2)));
    CHECK(b.text.has_value() == bool(mask & 4));
  }
}

TEST_CASE("encode_null fills zeros and presence flags") {
  Rng gen(12);
  const EncoderBank bank(light_slots());
  const auto full = assemble_conditioning(random_scene(gen, bank, 8, 8, 2), bank.config());
  const ConditioningShape shape{8, 8, {3, 3, 8}};
  const auto n = encode_null(full, shape);
  CHECK(n.present == std::array<float, 3>{1, 1, 1});
  CHECK(n.structure == full.structure->values);
  const auto z = encode_null(ConditioningBundle{}, shape);
  CHECK(z.present == std::array<float, 3>{0, 0, 0});
  CHECK(z.structure == Tensor3(2, 8, 8));
  REQUIRE(z.appearance.size() == 3);
  CHECK(z.appearance[2] == Tensor3(10, 8, 8));
  CHECK(z.text.empty());
  CHECK_THROWS_AS(encode_null(full, ConditioningShape{16, 16, {3, 3, 8}}), ShapeMismatch);
  CHECK_THROWS_AS(encode_null(full, ConditioningShape{8, 8, {3, 3, 16}}), ShapeMismatch);
}
