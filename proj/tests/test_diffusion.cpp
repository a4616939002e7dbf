#include "torch_doctest.hpp"

#include <cmath>

#include "model_helpers.hpp"
#include "pairdiff/error.hpp"

using namespace pairdiff;
using namespace testutil;

TEST_CASE("linear schedule matches the cumulative product") {
  const NoiseSchedule s;
  CHECK(s.alpha_bar(0) == 1.0);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.0358e-5).epsilon(1e-3));
  CHECK_THROWS_AS(s.alpha_bar(1001), InvalidArgument);
  CHECK_THROWS_AS(s.alpha_bar(-1), InvalidArgument);
  const auto back = NoiseSchedule::from_json(NoiseSchedule(50, 1e-3, 1e-2).to_json());
  CHECK(back.steps() == 50);
  CHECK(back.alpha_bars() == NoiseSchedule(50, 1e-3, 1e-2).alpha_bars());
}

TEST_CASE("forward diffusion moments") {
  const NoiseSchedule s;
  Rng rng(1);
  const auto z0 = torch::full({1, 20000}, 0.8f);
  CHECK(torch::equal(forward_diffuse(z0, 0, gaussian({1, 20000}, rng), s), z0));
  for (int t : {10, 300, 999}) {
    const auto zt = forward_diffuse(z0, t, gaussian({1, 20000}, rng), s);
    const double ab = s.alpha_bar(t);
    CHECK(zt.mean().item<double>() == doctest::Approx(0.8 * std::sqrt(ab)).epsilon(0.03).scale(1.0));
    CHECK(zt.var().item<double>() == doctest::Approx(1.0 - ab).epsilon(0.05));
  }
  CHECK_THROWS_AS(forward_diffuse(z0, 1001, z0, s), InvalidArgument);
  CHECK_THROWS_AS(forward_diffuse(z0, 5, torch::zeros({2, 2}), s), ShapeMismatch);
}

TEST_CASE("gaussian draws are reproducible") {
  Rng a(3), b(3);
  CHECK(torch::equal(gaussian({2, 3, 4}, a), gaussian({2, 3, 4}, b)));
  Rng c(4);
  const auto big = gaussian({100000}, c);
  CHECK(big.mean().item<double>() == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
  CHECK(big.std().item<double>() == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("bag-of-words text") {
  const BagOfWordsText text(BagOfWordsText::default_vocabulary());
  CHECK(text.dim() == 16);
  const auto empty = text.encode("");
  CHECK(std::all_of(empty.begin(), empty.end(), [](float v) { return v == 0.0f; }));
  const auto v = text.encode("A picture of Red circle and red square, zebra");
  const auto& vocab = text.vocabulary();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const bool on = vocab[i] == "red" || vocab[i] == "circle" || vocab[i] == "square";
    CHECK(v[i] == (on ? 1.0f : 0.0f));
  }
}

TEST_CASE("model config") {
  ModelConfig cfg;
  CHECK(cfg.input_concat_channels() == 3 + 2 + (8 + 2) + (16 + 2) + (16 + 2) + 3);
  const auto shape = cfg.conditioning_shape();
  CHECK(shape.height == 32);
  CHECK(shape.appearance_channels == std::array<int, 3>{8, 16, 16});
  cfg.variant = DenoiserVariant::control;
  cfg.widths = {8, 16, 32};
  const auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.variant == DenoiserVariant::control);
  CHECK(back.widths == cfg.widths);
  CHECK(back.vocabulary == cfg.vocabulary);
  CHECK_THROWS_AS(denoiser_variant_from_string("dit"), InvalidArgument);
}

TEST_CASE("denoisers predict latent-shaped noise") {
  for (auto variant : {DenoiserVariant::input_concat, DenoiserVariant::control}) {
    auto model = tiny_model(1, variant);
    const auto bundle = tiny_bundle(model, 2);
    Rng rng(3);
    const auto z = gaussian({2, 3, 8, 8}, rng);
    const auto cond = encode_bundles({bundle, ConditioningBundle{}}, model.config(), *model.text);
    torch::NoGradGuard g;
    const auto eps = model.net->predict(z, cond, torch::tensor({10, 900}, torch::kInt64));
    CHECK(eps.sizes() == z.sizes());
    CHECK(model.net->parameter_count() > 0);
  }
}

TEST_CASE("default input-concat model size") {
  init_torch_runtime();
  const auto model = make_model(ModelConfig{}, 0);
  CHECK(model.net->parameter_count() == 1492515);
}

TEST_CASE("make_model is seeded") {
  const auto a = tiny_model(5);
  const auto b = tiny_model(5);
  const auto c = tiny_model(6);
  CHECK(same_parameters(*a.net, *b.net));
  CHECK(!same_parameters(*a.net, *c.net));
}

TEST_CASE("control variant ignores conditioning before training") {
  auto model = tiny_model(7, DenoiserVariant::control);
  Rng rng(8);
  for (int i = 0; i < 5; ++i) {
    const auto bundle = tiny_bundle(model, 100 + static_cast<std::uint64_t>(i));
    const auto z = gaussian({1, 3, 8, 8}, rng);
    const auto t = torch::tensor({static_cast<int64_t>(rng.uniform_int(1, 1000))}, torch::kInt64);
    torch::NoGradGuard g;
    const auto with = model.net->predict(z, encode_bundles({bundle}, model.config(), *model.text), t);
    const auto without = model.net->predict(z, encode_bundles({ConditioningBundle{}}, model.config(), *model.text), t);
    CHECK(torch::equal(with, without));
  }
}

TEST_CASE("control branch starts affecting predictions after training steps") {
  TrainingConfig cfg = tiny_training(9);
  cfg.model.variant = DenoiserVariant::control;
  cfg.learning_rate = 1e-2;
  Trainer trainer(cfg);
  const auto pool = tiny_pool(trainer.model(), 8, 10);
  trainer.run(pool, 5);
  Rng rng(11);
  const auto z = gaussian({1, 3, 8, 8}, rng);
  const auto t = torch::tensor({500}, torch::kInt64);
  auto& m = trainer.model();
  torch::NoGradGuard g;
  const auto with = m.net->predict(z, encode_bundles({pool[0].bundle}, m.config(), *m.text), t);
  const auto without = m.net->predict(z, encode_bundles({ConditioningBundle{}}, m.config(), *m.text), t);
  CHECK(!torch::equal(with, without));
}

TEST_CASE("conditioning batch encodes presence flags and text") {
  const auto model = tiny_model();
  const auto bundle = tiny_bundle(model, 12);
  const auto batch = encode_bundles({bundle, select_streams(bundle, true, false, false), ConditioningBundle{}},
                                    model.config(), *model.text);
  CHECK(batch.size() == 3);
  CHECK(batch.present[0].sum().item<float>() == 3.0f);
  CHECK(batch.present[1][0].item<float>() == 1.0f);
  CHECK(batch.present[1][1].item<float>() == 0.0f);
  CHECK(batch.present[2].sum().item<float>() == 0.0f);
  CHECK(batch.text[2].abs().sum().item<float>() == 0.0f);
  CHECK(batch.text[0].sum().item<float>() == 2.0f);  // "red", "circle"
  CHECK(batch.appearance[2].sizes() == std::vector<int64_t>{3, 10, 8, 8});
  CHECK(batch.appearance[1][1].abs().sum().item<float>() == 0.0f);
}

TEST_CASE("identity codec and image conversions") {
  Rng rng(13);
  const Image img = random_image(rng, 8, 8);
  const auto t = image_to_tensor(img);
  CHECK(t.sizes() == std::vector<int64_t>{1, 3, 8, 8});
  CHECK(tensor_to_image(t) == img);
  IdentityCodec codec;
  CHECK(torch::equal(codec.decode(codec.encode(t)), t));
  CHECK(codec.latent_range() == std::pair{0.0, 1.0});
  const Image clamped = tensor_to_image(t * 3 - 1);
  for (float v : clamped.pixels.values) CHECK((v >= 0.0f && v <= 1.0f));
  const auto m = mask_to_tensor(random_mask(rng, 4, 5));
  CHECK(m.sizes() == std::vector<int64_t>{1, 1, 4, 5});
}

TEST_CASE("autoencoder codec shapes and serialization") {
  init_torch_runtime();
  torch::manual_seed(0);
  AutoencoderCodec codec(4, 16);
  Rng rng(14);
  const auto x = image_to_tensor(random_image(rng, 16, 16));
  const auto z = codec.encode(x);
  CHECK(z.sizes() == std::vector<int64_t>{1, 4, 8, 8});
  CHECK(codec.decode(z).sizes() == x.sizes());
  codec.set_scale(2.5);
  codec.set_latent_range(std::pair{-3.0, 4.0});
  const auto j = codec_to_json(codec);
  const auto back = make_codec(j);
  CHECK(back->id() == "autoencoder");
  CHECK(back->downsample() == 2);
  CHECK(back->latent_range() == std::pair{-3.0, 4.0});
  CHECK(codec_to_json(*back) == j);
  CHECK_THROWS_AS(make_codec({{"type", "vqgan"}}), InvalidArgument);
}

TEST_CASE("make_model rejects a codec with mismatched channels") {
  CHECK_THROWS_AS(make_model(tiny_config(), 0, NoiseSchedule(), std::make_shared<AutoencoderCodec>(4, 8)),
                  InvalidArgument);
}
