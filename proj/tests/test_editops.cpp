#include <doctest.h>

#include "helpers.hpp"
#include "pairdiff/conditioning.hpp"
#include "pairdiff/editops.hpp"
#include "pairdiff/error.hpp"

using namespace pairdiff;
using namespace testutil;

namespace {

SceneResolver no_refs() {
  return [](const std::string& id) -> SceneDescription { throw NotFound("no scene " + id); };
}

// Foreground object id (category != 0), or -1.
int foreground(const SceneDescription& s) {
  for (int i = 0; i < s.num_objects(); ++i) {
    if (s.objects[static_cast<std::size_t>(i)].structure.category != 0) return i;
  }
  return -1;
}

}  // namespace

TEST_CASE("appearance edit is a slotwise affine combination") {
  Rng rng(1);
  const EncoderBank bank(light_slots());
  for (int i = 0; i < 20; ++i) {
    const auto a = random_scene(rng, bank);
    const auto b = random_scene(rng, bank);
    const double a0 = rng.normal(), a1 = rng.normal();
    const auto e = edit_appearance(a, 1, b, 2, a0, a1);
    for (std::size_t l = 0; l < 3; ++l) {
      const auto& f = a.objects[1].appearance.layers[l].values;
      const auto& r = b.objects[2].appearance.layers[l].values;
      const auto& g = e.objects[1].appearance.layers[l].values;
      for (std::size_t c = 0; c < f.size(); ++c) CHECK(g[c] == doctest::Approx(a0 * f[c] + a1 * r[c]).epsilon(1e-6));
    }
    for (int id = 0; id < a.num_objects(); ++id) {
      if (id != 1) CHECK(e.objects[static_cast<std::size_t>(id)] == a.objects[static_cast<std::size_t>(id)]);
    }
    CHECK(e.objects[1].structure == a.objects[1].structure);
  }
}

TEST_CASE("interpolation endpoints and affinity of the conditioning") {
  Rng rng(2);
  const EncoderBank bank;
  const auto a = random_scene(rng, bank, 32, 32, 3);
  const auto b = random_scene(rng, bank, 32, 32, 3);
  const auto cfg = bank.config();
  const auto base = assemble_conditioning(a, cfg);
  CHECK(assemble_conditioning(interpolate_appearance(a, 1, b, 2, 0.0), cfg) == base);
  const auto swap = assemble_conditioning(edit_appearance(a, 1, b, 2, 0.0, 1.0), cfg);
  CHECK(assemble_conditioning(interpolate_appearance(a, 1, b, 2, 1.0), cfg) == swap);
  for (double lambda : {0.25, 0.5, 0.75}) {
    const auto e = interpolate_appearance(a, 1, b, 2, lambda);
    for (std::size_t l = 0; l < 3; ++l) {
      const auto& f = a.objects[1].appearance.layers[l].values;
      const auto& r = b.objects[2].appearance.layers[l].values;
      const auto& g = e.objects[1].appearance.layers[l].values;
      for (std::size_t c = 0; c < f.size(); ++c) {
        CHECK(std::abs(g[c] - ((1 - lambda) * f[c] + lambda * r[c])) <= 1e-6);
      }
    }
  }
  CHECK_THROWS_AS(interpolate_appearance(a, 1, b, 2, 1.5), InvalidArgument);
}

TEST_CASE("appearance edit with a0=1, a1=0 is the identity") {
  Rng rng(3);
  const EncoderBank bank(light_slots());
  const auto a = random_scene(rng, bank);
  CHECK(edit_appearance(a, 0, a, 1, 1.0, 0.0) == a);
  CHECK_THROWS_AS(edit_appearance(a, 9, a, 1, 1.0, 0.0), NotFound);
}

TEST_CASE("shape edits keep the partition") {
  Rng rng(4);
  const EncoderBank bank(light_slots());
  for (int i = 0; i < 100; ++i) {
    const auto s = random_scene(rng, bank, 12, 12, 4);
    const int target = foreground(s);
    if (target < 0) continue;
    const Mask m = random_mask(rng, 12, 12, 0.3);
    if (mask_area(m) == m.size()) continue;
    const auto e = edit_shape(s, target, m);
    CHECK_NOTHROW(validate_scene(e));
    int owner = -1;
    for (int id = 0; id < e.num_objects(); ++id) {
      if (e.objects[static_cast<std::size_t>(id)].structure.mask == m) owner = id;
    }
    CHECK(owner >= 0);
  }
}

TEST_CASE("shape edit and back restores the scene when only background pixels were claimed") {
  Rng rng(5);
  const EncoderBank bank(light_slots());
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const auto s = random_scene(rng, bank, 12, 12, 3);
    const int target = foreground(s);
    const auto bg = background_object(s);
    if (target < 0 || !bg) continue;
    const Mask& old = s.objects[static_cast<std::size_t>(target)].structure.mask;
    const Mask& bgm = s.objects[static_cast<std::size_t>(*bg)].structure.mask;
    Mask grown = old;
    int claimed = 0;
    for (std::size_t k = 0; k < grown.size(); ++k) {
      if (bgm[k] && rng.bernoulli(0.3) && mask_area(bgm) - claimed > 1) {
        grown[k] = 1;
        ++claimed;
      }
    }
    const auto e = edit_shape(s, target, grown);
    int new_id = -1;
    for (int id = 0; id < e.num_objects(); ++id) {
      if (e.objects[static_cast<std::size_t>(id)].structure.mask == grown) new_id = id;
    }
    REQUIRE(new_id >= 0);
    CHECK(edit_shape(e, new_id, old) == s);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("shape edit covering the canvas without a background fails") {
  Rng rng(6);
  const EncoderBank bank(light_slots());
  auto s = random_scene(rng, bank, 8, 8, 3);
  for (auto& o : s.objects) o.structure.category = 1;
  CHECK_THROWS_AS(edit_shape(s, 0, Mask(8, 8, 1)), PartitionViolation);
  CHECK_THROWS_AS(edit_shape(s, 0, Mask(8, 8, 0)), InvalidArgument);
  CHECK_THROWS_AS(edit_shape(s, 0, Mask(4, 8, 1)), ShapeMismatch);
}

TEST_CASE("shrinking an object hands vacated pixels to the background") {
  Rng rng(7);
  const EncoderBank bank(light_slots());
  for (int i = 0; i < 50; ++i) {
    const auto s = random_scene(rng, bank, 12, 12, 3);
    const int target = foreground(s);
    const auto bg = background_object(s);
    if (target < 0 || !bg) continue;
    const Mask& old = s.objects[static_cast<std::size_t>(target)].structure.mask;
    if (mask_area(old) < 2) continue;
    Mask shrunk(12, 12);
    for (std::size_t k = 0; k < old.size(); ++k) {
      if (old[k]) {
        shrunk[k] = 1;
        break;
      }
    }
    const auto e = edit_shape(s, target, shrunk);
    CHECK(mask_area(e.objects[static_cast<std::size_t>(*background_object(e))].structure.mask) ==
          mask_area(s.objects[static_cast<std::size_t>(*bg)].structure.mask) + mask_area(old) - 1);
  }
}

TEST_CASE("add_object appends the new object and keeps the partition") {
  Rng rng(8);
  const EncoderBank bank(light_slots());
  for (int i = 0; i < 50; ++i) {
    const auto s = random_scene(rng, bank, 12, 12, 3);
    const auto r = random_scene(rng, bank, 12, 12, 3);
    Mask m = random_mask(rng, 12, 12, 0.2);
    if (mask_area(m) == m.size()) continue;
    const auto e = add_object(s, m, 2, r, 1);
    CHECK_NOTHROW(validate_scene(e));
    const auto& added = e.objects.back();
    CHECK(added.structure.mask == m);
    CHECK(added.structure.category == 2);
    CHECK(added.appearance == r.objects[1].appearance);
  }
}

TEST_CASE("add_object rejects misaligned appearance") {
  Rng rng(9);
  const auto s = random_scene(rng, EncoderBank(light_slots()), 8, 8, 2);
  const auto r = random_scene(rng, EncoderBank(), 8, 8, 2);
  Mask m(8, 8);
  m(0, 0) = 1;
  CHECK_THROWS_AS(add_object(s, m, 1, r, 0), ShapeMismatch);
}

TEST_CASE("variation keeps the scene and targets the object mask") {
  Rng rng(10);
  const auto s = random_scene(rng, EncoderBank(light_slots()), 8, 8, 3);
  const auto [scene, spec] = make_variation(s, 1, 42);
  CHECK(scene == s);
  CHECK(spec.kind == EditKind::variation);
  CHECK(*spec.region_mask == s.objects[1].structure.mask);
  CHECK(spec.seed == 42);
}

TEST_CASE("apply_edit regions") {
  Rng rng(11);
  const EncoderBank bank(light_slots());
  const auto s = random_scene(rng, bank, 12, 12, 3);
  const int target = foreground(s);
  REQUIRE(target >= 0);
  SUBCASE("appearance edits resample the object") {
    EditSpec spec;
    spec.kind = EditKind::appearance;
    spec.target = target;
    spec.ref = ObjectRef{"", 0};
    spec.a0 = 0;
    spec.a1 = 1;
    const auto r = apply_edit(s, spec, no_refs());
    CHECK(r.region == s.objects[static_cast<std::size_t>(target)].structure.mask);
  }
  SUBCASE("shape edits resample old and new masks") {
    EditSpec spec;
    spec.kind = EditKind::shape;
    spec.target = target;
    Mask m(12, 12);
    m(0, 0) = 1;
    m(11, 11) = 1;
    spec.new_mask = m;
    const auto r = apply_edit(s, spec, no_refs());
    const Mask& old = s.objects[static_cast<std::size_t>(target)].structure.mask;
    for (std::size_t k = 0; k < m.size(); ++k) CHECK(r.region[k] == (m[k] || old[k] ? 1 : 0));
  }
  SUBCASE("explicit region and prompt win") {
    EditSpec spec;
    spec.kind = EditKind::variation;
    spec.target = target;
    spec.region_mask = Mask(12, 12, 1);
    spec.prompt = "A picture of blue square";
    const auto r = apply_edit(s, spec, no_refs());
    CHECK(r.region == Mask(12, 12, 1));
    CHECK(*r.scene.caption == "A picture of blue square");
  }
  SUBCASE("unknown reference scene propagates NotFound") {
    EditSpec spec;
    spec.kind = EditKind::appearance;
    spec.target = target;
    spec.scene = "a";
    spec.ref = ObjectRef{"b", 0};
    CHECK_THROWS_AS(apply_edit(s, spec, no_refs()), NotFound);
  }
}

TEST_CASE("edit spec validation") {
  EditSpec spec;
  spec.kind = EditKind::appearance;
  CHECK_THROWS_AS(validate_edit_spec(spec), InvalidEditSpec);
  spec.ref = ObjectRef{"", 0};
  CHECK_NOTHROW(validate_edit_spec(spec));
  spec.lambda = 2.0;
  CHECK_THROWS_AS(validate_edit_spec(spec), InvalidEditSpec);
  spec = EditSpec{};
  spec.kind = EditKind::shape;
  CHECK_THROWS_AS(validate_edit_spec(spec), InvalidEditSpec);
  spec.new_mask = Mask(4, 4, 0);
  CHECK_THROWS_AS(validate_edit_spec(spec), InvalidEditSpec);
  spec = EditSpec{};
  spec.kind = EditKind::add;
  spec.new_mask = Mask(4, 4, 1);
  spec.ref = ObjectRef{"", 0};
  CHECK_THROWS_AS(validate_edit_spec(spec), InvalidEditSpec);
  spec.category = 1;
  CHECK_NOTHROW(validate_edit_spec(spec));
  spec.guidance.s_text = -1;
  CHECK_THROWS_AS(validate_edit_spec(spec), InvalidEditSpec);
}

TEST_CASE("edit spec JSON round trip") {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    EditSpec spec;
    spec.kind = static_cast<EditKind>(rng.uniform_int(0, 3));
    spec.scene = "s" + std::to_string(i);
    spec.target = static_cast<int>(rng.uniform_int(0, 5));
    spec.a0 = rng.normal();
    spec.a1 = rng.normal();
    if (rng.bernoulli(0.5)) spec.lambda = rng.uniform();
    if (rng.bernoulli(0.5)) spec.new_mask = random_mask(rng, 6, 7);
    if (rng.bernoulli(0.5)) spec.category = static_cast<int>(rng.uniform_int(0, 3));
    if (rng.bernoulli(0.5)) spec.ref = ObjectRef{"r", 2};
    spec.seed = rng.next_u64();
    if (rng.bernoulli(0.5)) spec.region_mask = random_mask(rng, 6, 7);
    spec.guidance = GuidanceWeights{rng.uniform() * 8, rng.uniform() * 8, rng.uniform() * 8};
    if (rng.bernoulli(0.5)) spec.prompt = "A picture of red circle";
    if (rng.bernoulli(0.5)) spec.sampler.steps = 10;
    if (rng.bernoulli(0.5)) spec.sampler.eta = 0.5;
    if (rng.bernoulli(0.5)) spec.sampler.combiner = Combiner::joint;
    CHECK(edit_spec_from_json(nlohmann::json::parse(edit_spec_to_json(spec).dump())) == spec);
  }
  CHECK_THROWS_AS(edit_spec_from_json(nlohmann::json{{"kind", "rotate"}}), InvalidEditSpec);
  CHECK_THROWS_AS(edit_spec_from_json(nlohmann::json{{"target", 1}}), InvalidEditSpec);
}

TEST_CASE("guidance hints") {
  CHECK(guidance_hints(kTextPreset).empty());
  CHECK(guidance_hints(GuidanceWeights{2, 4, 8}).size() == 1);
  CHECK(guidance_hints(GuidanceWeights{2, 4, 1}).size() == 2);
}
