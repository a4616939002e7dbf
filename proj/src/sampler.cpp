#include "pairdiff/sampler.hpp"

#include <cmath>

#include "pairdiff/error.hpp"

namespace pairdiff {

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
  if (steps < 1 || steps > schedule.steps()) {
    throw InvalidArgument("sampler steps must lie in [1, " + std::to_string(schedule.steps()) + "]");
  }
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidArgument("eta must lie in [0, 1]");
}

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.sizes().equals(b.sizes())) throw ShapeMismatch("guidance inputs differ in shape");
}

}  // namespace

torch::Tensor cfg_combine_factorized(const torch::Tensor& e0, const torch::Tensor& eS, const torch::Tensor& eSF,
                                     const torch::Tensor& ey, const GuidanceWeights& w) {
  check_same(e0, eS);
  check_same(e0, eSF);
  check_same(e0, ey);
  return e0 + (eS - e0) * w.s_structure + (eSF - eS) * w.s_appearance + (ey - e0) * w.s_text;
}

torch::Tensor cfg_combine_joint(const torch::Tensor& e0, const torch::Tensor& eS, const torch::Tensor& eSF,
                                const torch::Tensor& eSFy, const GuidanceWeights& w) {
  check_same(e0, eS);
  check_same(e0, eSF);
  check_same(e0, eSFy);
  return e0 + (eS - e0) * w.s_structure + (eSF - eS) * w.s_appearance + (eSFy - eSF) * w.s_text;
}

GuidedPrediction guided_prediction(const DiffusionModel& model, const torch::Tensor& z_t,
                                   const ConditioningBundle& bundle, const GuidanceWeights& w, Combiner combiner,
                                   int t) {
  if (z_t.dim() != 4 || z_t.size(0) != 1) throw ShapeMismatch("guided prediction expects a single latent");
  const bool joint = combiner == Combiner::joint;
  std::vector<ConditioningBundle> subsets{
      select_streams(bundle, false, false, false), select_streams(bundle, true, false, false),
      select_streams(bundle, true, true, false),
      joint ? select_streams(bundle, true, true, true) : select_streams(bundle, false, false, true)};
  auto cond = encode_bundles(subsets, model.config(), *model.text);
  torch::NoGradGuard g;
  auto eps = model.net->predict(z_t.expand({4, z_t.size(1), z_t.size(2), z_t.size(3)}).contiguous(), cond,
                                torch::full({4}, t, torch::kInt64));
  GuidedPrediction p{eps[0].unsqueeze(0), eps[1].unsqueeze(0), eps[2].unsqueeze(0), eps[3].unsqueeze(0), {}};
  p.combined = joint ? cfg_combine_joint(p.e0, p.eS, p.eSF, p.last, w)
                     : cfg_combine_factorized(p.e0, p.eS, p.eSF, p.last, w);
  return p;
}

std::vector<int> ddim_timesteps(int steps, int total) {
  if (steps < 1 || steps > total) throw InvalidArgument("DDIM steps must lie in [1, T]");
  std::vector<int> ts;
  for (int k = 1; k <= steps; ++k) {
    ts.push_back(static_cast<int>(std::lround(static_cast<double>(k) * total / steps)));
  }
  return ts;
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps, int t, int t_prev,
                        const NoiseSchedule& schedule, double eta, Rng& rng,
                        const std::optional<std::pair<double, double>>& clip) {
  if (!(t > t_prev && t_prev >= 0)) throw InvalidArgument("ddim_step requires t > t_prev >= 0");
  if (!z_t.sizes().equals(eps.sizes())) throw ShapeMismatch("noise prediction differs in shape");
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  auto z0 = (z_t - eps * std::sqrt(1.0 - ab)) / std::sqrt(ab);
  torch::Tensor e = eps;
  if (clip) {
    z0 = z0.clamp(clip->first, clip->second);
    e = (z_t - z0 * std::sqrt(ab)) / std::sqrt(1.0 - ab);
  }
  if (eta == 0.0) return z0 * std::sqrt(ab_prev) + e * std::sqrt(1.0 - ab_prev);
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  return z0 * std::sqrt(ab_prev) + e * dir + gaussian(z_t.sizes(), rng) * sigma;
}

torch::Tensor sample_latent(const DiffusionModel& model, const ConditioningBundle& bundle, const GuidanceWeights& w,
                            const SamplerConfig& cfg, const std::optional<torch::Tensor>& region,
                            const std::optional<torch::Tensor>& original,
                            const std::optional<torch::Tensor>& initial_noise, const ProgressFn& progress) {
  cfg.validate(model.schedule);
  w.validate();
  bundle.validate();
  if (region && !original) throw InvalidArgument("masked sampling needs the original latent");
  const auto& mc = model.config();
  const std::vector<int64_t> shape{1, mc.latent_channels, mc.resolution, mc.resolution};
  if (region && (region->dim() != 4 || region->size(2) != mc.resolution || region->size(3) != mc.resolution)) {
    throw ShapeMismatch("region mask does not match the latent resolution");
  }
  if (original && !original->sizes().equals(shape)) throw ShapeMismatch("original latent has the wrong shape");

  Rng init_rng(derive_seed(cfg.seed, 0));
  Rng step_rng(derive_seed(cfg.seed, 1));
  Rng composite_rng(derive_seed(cfg.seed, 2));
  torch::Tensor z = initial_noise ? initial_noise->clone() : gaussian(shape, init_rng);
  if (!z.sizes().equals(shape)) throw ShapeMismatch("initial noise has the wrong shape");

  const auto ts = ddim_timesteps(cfg.steps, model.schedule.steps());
  const auto clip = cfg.clip_denoised ? model.codec->latent_range() : std::nullopt;
  const int total = static_cast<int>(ts.size());
  auto composite = [&](const torch::Tensor& x, int t) {
    if (!region) return x;
    auto known = forward_diffuse(*original, t, gaussian(shape, composite_rng), model.schedule);
    return *region * x + (1 - *region) * known;
  };
  z = composite(z, ts.back());
  for (int k = total - 1; k >= 0; --k) {
    const int t = ts[static_cast<std::size_t>(k)];
    const int t_prev = k > 0 ? ts[static_cast<std::size_t>(k - 1)] : 0;
    auto eps = guided_prediction(model, z, bundle, w, cfg.combiner, t).combined;
    z = composite(ddim_step(z, eps, t, t_prev, model.schedule, cfg.eta, step_rng, clip), t_prev);
    if (progress) progress(total - k, total);
  }
  return z;
}

torch::Tensor latent_region(const DiffusionModel& model, const Mask& region) {
  const int f = model.codec->downsample();
  const int r = model.config().resolution;
  if (region.height() != r * f || region.width() != r * f) {
    throw ShapeMismatch("region mask does not match the model image resolution");
  }
  auto m = mask_to_tensor(region);
  if (f == 1) return m;
  namespace F = torch::nn::functional;
  return F::avg_pool2d(m, F::AvgPool2dFuncOptions(f));
}

Image sample(const DiffusionModel& model, const ConditioningBundle& bundle, const GuidanceWeights& w,
             const SamplerConfig& cfg, const std::optional<Mask>& region, const std::optional<Image>& original,
             const ProgressFn& progress) {
  std::optional<torch::Tensor> r, o;
  if (region) r = latent_region(model, *region);
  if (original) o = model.codec->encode(image_to_tensor(*original));
  return tensor_to_image(model.codec->decode(sample_latent(model, bundle, w, cfg, r, o, std::nullopt, progress)));
}

torch::Tensor ddim_invert(const DiffusionModel& model, const torch::Tensor& z0, const ConditioningBundle& bundle,
                          const GuidanceWeights& w, const SamplerConfig& cfg) {
  if (cfg.eta != 0.0) throw InvalidArgument("DDIM inversion requires eta = 0");
  cfg.validate(model.schedule);
  w.validate();
  bundle.validate();
  const auto ts = ddim_timesteps(cfg.steps, model.schedule.steps());
  torch::Tensor z = z0.clone();
  int t_prev = 0;
  for (int t : ts) {
    auto eps = guided_prediction(model, z, bundle, w, cfg.combiner, t).combined;
    const double ab = model.schedule.alpha_bar(t);
    const double ab_prev = model.schedule.alpha_bar(t_prev);
    auto x0 = (z - eps * std::sqrt(1.0 - ab_prev)) / std::sqrt(ab_prev);
    z = x0 * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
    t_prev = t;
  }
  return z;
}

}  // namespace pairdiff
