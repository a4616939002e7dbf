#include "torch_doctest.hpp"

#include <cmath>

#include "model_helpers.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/metrics.hpp"
#include "pairdiff/sampler.hpp"

using namespace pairdiff;
using namespace testutil;

namespace {

// ε̂ = c·z, independent of conditioning and time.
class LinearDenoiser final : public DenoiserModelImpl {
 public:
  LinearDenoiser(ModelConfig cfg, double c) : cfg_(std::move(cfg)), c_(c) {}
  torch::Tensor predict(const torch::Tensor& z, const ConditioningBatch&, const torch::Tensor&) override {
    return z * c_;
  }
  const ModelConfig& config() const override { return cfg_; }

 private:
  ModelConfig cfg_;
  double c_;
};

DiffusionModel linear_model(double c) {
  auto m = tiny_model();
  m.net = std::make_shared<LinearDenoiser>(tiny_config(), c);
  return m;
}

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kFloat64);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

TEST_CASE("factorized combiner with unit weights collapses") {
  Rng rng(1);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto e0 = gaussian({1, 3, 4, 4}, rng), eS = gaussian({1, 3, 4, 4}, rng);
    const auto eSF = gaussian({1, 3, 4, 4}, rng), ey = gaussian({1, 3, 4, 4}, rng);
    const auto got = cfg_combine_factorized(e0, eS, eSF, ey, GuidanceWeights{1, 1, 1});
    worst = std::max(worst, (got - (eSF + ey - e0)).abs().max().item<double>());
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("combiners match element-wise formula oracles") {
  Rng rng(2);
  double worst_f = 0, worst_j = 0, worst_eq = 0;
  for (int i = 0; i < 100; ++i) {
    // Double inputs so the comparison isolates the formula from float32 round-off.
    const auto e0 = gaussian({1, 2, 3, 3}, rng).to(torch::kFloat64), eS = gaussian({1, 2, 3, 3}, rng).to(torch::kFloat64);
    const auto eSF = gaussian({1, 2, 3, 3}, rng).to(torch::kFloat64), ey = gaussian({1, 2, 3, 3}, rng).to(torch::kFloat64);
    const GuidanceWeights w{rng.uniform() * 10, rng.uniform() * 10, rng.uniform() * 10};
    const auto f = to_vec(cfg_combine_factorized(e0, eS, eSF, ey, w));
    const auto j = to_vec(cfg_combine_joint(e0, eS, eSF, ey, w));
    const auto a = to_vec(e0), b = to_vec(eS), c = to_vec(eSF), d = to_vec(ey);
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double of = a[k] + w.s_structure * (b[k] - a[k]) + w.s_appearance * (c[k] - b[k]) + w.s_text * (d[k] - a[k]);
      const double oj = a[k] + w.s_structure * (b[k] - a[k]) + w.s_appearance * (c[k] - b[k]) + w.s_text * (d[k] - c[k]);
      worst_f = std::max(worst_f, std::abs(f[k] - of) / std::max(1.0, std::abs(of)));
      worst_j = std::max(worst_j, std::abs(j[k] - oj) / std::max(1.0, std::abs(oj)));
    }
    const GuidanceWeights w0{w.s_structure, w.s_appearance, 0.0};
    worst_eq = std::max(worst_eq, (cfg_combine_factorized(e0, eS, eSF, ey, w0) - cfg_combine_joint(e0, eS, eSF, ey, w0))
                                      .abs()
                                      .max()
                                      .item<double>());
  }
  CHECK(worst_f <= 1e-6);
  CHECK(worst_j <= 1e-6);
  CHECK(worst_eq <= 1e-6);
  CHECK_THROWS_AS(cfg_combine_joint(torch::zeros({2}), torch::zeros({3}), torch::zeros({2}), torch::zeros({2}), {}),
                  ShapeMismatch);
}

TEST_CASE("batched guidance matches four separate evaluations") {
  TrainingConfig cfg = tiny_training(3);
  cfg.learning_rate = 1e-2;
  Trainer trainer(cfg);
  trainer.run(tiny_pool(trainer.model(), 8, 4), 5);
  const auto& model = trainer.model();
  const auto bundle = tiny_bundle(model, 5);
  Rng rng(6);
  const auto z = gaussian({1, 3, 8, 8}, rng);
  for (auto combiner : {Combiner::factorized, Combiner::joint}) {
    const auto p = guided_prediction(model, z, bundle, kTextPreset, combiner, 400);
    const bool joint = combiner == Combiner::joint;
    const std::vector<ConditioningBundle> subsets{
        select_streams(bundle, false, false, false), select_streams(bundle, true, false, false),
        select_streams(bundle, true, true, false), select_streams(bundle, joint, joint, true)};
    std::vector<torch::Tensor> single;
    torch::NoGradGuard g;
    for (const auto& b : subsets) {
      single.push_back(model.net->predict(z, encode_bundles({b}, model.config(), *model.text),
                                          torch::tensor({400}, torch::kInt64)));
    }
    CHECK((p.e0 - single[0]).abs().max().item<double>() <= 1e-5);
    CHECK((p.eS - single[1]).abs().max().item<double>() <= 1e-5);
    CHECK((p.eSF - single[2]).abs().max().item<double>() <= 1e-5);
    CHECK((p.last - single[3]).abs().max().item<double>() <= 1e-5);
    CHECK(!torch::equal(p.eS, p.e0));
  }
}

TEST_CASE("DDIM timesteps") {
  CHECK(ddim_timesteps(3, 1000) == std::vector<int>{333, 667, 1000});
  const auto t20 = ddim_timesteps(20, 1000);
  CHECK(t20.front() == 50);
  CHECK(t20.back() == 1000);
  const auto all = ddim_timesteps(1000, 1000);
  for (int k = 0; k < 1000; ++k) CHECK(all[static_cast<std::size_t>(k)] == k + 1);
  CHECK_THROWS_AS(ddim_timesteps(0, 1000), InvalidArgument);
  CHECK_THROWS_AS(ddim_timesteps(1001, 1000), InvalidArgument);
}

TEST_CASE("DDIM step matches the scalar update") {
  const NoiseSchedule s;
  Rng rng(7);
  const auto z = gaussian({1, 3, 4, 4}, rng);
  const auto eps = gaussian({1, 3, 4, 4}, rng);
  const auto zv = to_vec(z), ev = to_vec(eps);
  for (auto [t, tp] : std::vector<std::pair<int, int>>{{1000, 950}, {500, 0}, {30, 10}}) {
    const double ab = s.alpha_bar(t), abp = s.alpha_bar(tp);
    Rng unused(0);
    const auto out = to_vec(ddim_step(z, eps, t, tp, s, 0.0, unused));
    for (std::size_t k = 0; k < zv.size(); ++k) {
      const double x0 = (zv[k] - std::sqrt(1 - ab) * ev[k]) / std::sqrt(ab);
      CHECK(out[k] == doctest::Approx(std::sqrt(abp) * x0 + std::sqrt(1 - abp) * ev[k]).epsilon(1e-5));
    }
  }
  SUBCASE("stochastic step") {
    const int t = 600, tp = 500;
    const double ab = s.alpha_bar(t), abp = s.alpha_bar(tp);
    const double eta = 0.7;
    const double sigma = eta * std::sqrt((1 - abp) / (1 - ab)) * std::sqrt(1 - ab / abp);
    Rng a(9), noise(9);
    const auto out = to_vec(ddim_step(z, eps, t, tp, s, eta, a));
    const auto nv = to_vec(gaussian({1, 3, 4, 4}, noise));
    for (std::size_t k = 0; k < zv.size(); ++k) {
      const double x0 = (zv[k] - std::sqrt(1 - ab) * ev[k]) / std::sqrt(ab);
      const double ref = std::sqrt(abp) * x0 + std::sqrt(1 - abp - sigma * sigma) * ev[k] + sigma * nv[k];
      CHECK(out[k] == doctest::Approx(ref).epsilon(1e-5));
    }
  }
  SUBCASE("clipping clamps the clean estimate") {
    Rng unused(0);
    const auto out = ddim_step(z * 50, eps, 500, 0, s, 0.0, unused, std::pair{0.0, 1.0});
    CHECK(out.min().item<double>() >= 0.0);
    CHECK(out.max().item<double>() <= 1.0);
  }
  Rng unused(0);
  CHECK_THROWS_AS(ddim_step(z, eps, 10, 10, s, 0.0, unused), InvalidArgument);
  CHECK_THROWS_AS(ddim_step(z, eps.flatten(), 10, 5, s, 0.0, unused), ShapeMismatch);
}

TEST_CASE("sampling with a linear model equals the hand-unrolled recurrence") {
  const double c = 0.3;
  const auto model = linear_model(c);
  const auto bundle = tiny_bundle(tiny_model(), 10);
  SamplerConfig cfg;
  cfg.steps = 7;
  cfg.seed = 11;
  cfg.clip_denoised = false;
  const auto got = to_vec(sample_latent(model, bundle, kTextPreset, cfg));
  Rng init(derive_seed(11, 0));
  auto z = to_vec(gaussian({1, 3, 8, 8}, init));
  const auto ts = ddim_timesteps(7, 1000);
  for (int k = 6; k >= 0; --k) {
    const double ab = model.schedule.alpha_bar(ts[static_cast<std::size_t>(k)]);
    const double abp = k > 0 ? model.schedule.alpha_bar(ts[static_cast<std::size_t>(k - 1)]) : 1.0;
    for (auto& v : z) {
      const double e = c * v;
      const double x0 = (v - std::sqrt(1 - ab) * e) / std::sqrt(ab);
      v = std::sqrt(abp) * x0 + std::sqrt(1 - abp) * e;
    }
  }
  double worst = 0;
  for (std::size_t k = 0; k < z.size(); ++k) worst = std::max(worst, std::abs(got[k] - z[k]) / std::max(1.0, std::abs(z[k])));
  CHECK(worst <= 1e-4);
}

TEST_CASE("inversion with a zero model is exact") {
  const auto model = linear_model(0.0);
  const auto bundle = tiny_bundle(tiny_model(), 12);
  Rng rng(13);
  const auto z0 = gaussian({1, 3, 8, 8}, rng);
  SamplerConfig cfg;
  cfg.steps = 10;
  cfg.clip_denoised = false;
  const auto zT = ddim_invert(model, z0, bundle, kTextPreset, cfg);
  CHECK(torch::allclose(zT, z0 * std::sqrt(model.schedule.alpha_bar(1000)), 1e-5, 1e-6));
  const auto back = sample_latent(model, bundle, kTextPreset, cfg, std::nullopt, std::nullopt, zT);
  CHECK(torch::allclose(back, z0, 1e-4, 1e-5));
  cfg.eta = 0.5;
  CHECK_THROWS_AS(ddim_invert(model, z0, bundle, kTextPreset, cfg), InvalidArgument);
}

TEST_CASE("masked sampling") {
  const auto model = tiny_model(14);
  const auto bundle = tiny_bundle(model, 15);
  Rng rng(16);
  const Image original = random_image(rng, 8, 8);
  SamplerConfig cfg;
  cfg.steps = 5;
  cfg.seed = 3;
  SUBCASE("an all-ones region equals unmasked sampling") {
    CHECK(sample(model, bundle, kTextPreset, cfg, Mask(8, 8, 1), original) == sample(model, bundle, kTextPreset, cfg));
  }
  SUBCASE("an all-zeros region returns the original") {
    CHECK(sample(model, bundle, kTextPreset, cfg, Mask(8, 8, 0), original) == original);
  }
  SUBCASE("pixels outside the region are untouched") {
    for (int i = 0; i < 5; ++i) {
      const Mask region = random_mask(rng, 8, 8, 0.4);
      cfg.seed = static_cast<std::uint64_t>(i);
      const Image out = sample(model, bundle, kTextPreset, cfg, region, original);
      CHECK(l1_locality(original, out, region) == 0.0);
    }
  }
  SUBCASE("region needs an original") {
    CHECK_THROWS_AS(sample_latent(model, bundle, kTextPreset, cfg, mask_to_tensor(Mask(8, 8, 1))), InvalidArgument);
    CHECK_THROWS_AS(sample(model, bundle, kTextPreset, cfg, Mask(16, 16, 1), original), ShapeMismatch);
  }
}

TEST_CASE("sampling is deterministic per seed") {
  const auto model = tiny_model(17);
  const auto bundle = tiny_bundle(model, 18);
  SamplerConfig cfg;
  cfg.steps = 4;
  cfg.eta = 0.5;
  cfg.seed = 1;
  const Image a = sample(model, bundle, kTextPreset, cfg);
  CHECK(sample(model, bundle, kTextPreset, cfg) == a);
  cfg.seed = 2;
  CHECK(sample(model, bundle, kTextPreset, cfg) != a);
}

TEST_CASE("progress reports every step") {
  const auto model = tiny_model(19);
  SamplerConfig cfg;
  cfg.steps = 6;
  std::vector<int> seen;
  sample(model, tiny_bundle(model, 20), kTextPreset, cfg, std::nullopt, std::nullopt,
         [&](int done, int total) {
           CHECK(total == 6);
           seen.push_back(done);
         });
  CHECK(seen == std::vector<int>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("sampler config validation") {
  const NoiseSchedule s;
  SamplerConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(s), InvalidArgument);
  cfg.steps = 10;
  cfg.eta = 1.5;
  CHECK_THROWS_AS(cfg.validate(s), InvalidArgument);
}

TEST_CASE("latent region holds per-cell mask coverage") {
  init_torch_runtime();
  ModelConfig mc = tiny_config();
  mc.latent_channels = 4;
  mc.resolution = 4;
  const auto model = make_model(mc, 0, NoiseSchedule(), std::make_shared<AutoencoderCodec>(4, 8), light_slots());
  Mask m(8, 8);
  m(0, 0) = 1;
  m(5, 6) = 1;
  m(4, 6) = 1;
  m(6, 2) = 1;
  m(6, 3) = 1;
  m(7, 2) = 1;
  m(7, 3) = 1;
  const auto r = latent_region(model, m);
  CHECK(r.sizes() == torch::IntArrayRef({1, 1, 4, 4}));
  CHECK(r.sum().item<float>() == 1.75f);
  CHECK(r[0][0][0][0].item<float>() == 0.25f);
  CHECK(r[0][0][2][3].item<float>() == 0.5f);
  CHECK(r[0][0][3][1].item<float>() == 1.0f);
  CHECK_THROWS_AS(latent_region(model, Mask(4, 4, 1)), ShapeMismatch);
}
