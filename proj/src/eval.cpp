#include "pairdiff/eval.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "pairdiff/error.hpp"

namespace pairdiff {

Image baseline_copy_paste(const Image& input, const Mask& region, const Image& driver) {
  if (region.height() != input.height() || region.width() != input.width()) {
    throw ShapeMismatch("region mask does not match the input image");
  }
  if (mask_empty(region)) throw InvalidArgument("copy-paste needs a non-empty region");
  const Box b = mask_bbox(region);
  const Tensor3 patch = resize_bilinear(driver.pixels, b.height(), b.width());
  Image out = input;
  for (int y = b.top; y < b.bottom; ++y) {
    for (int x = b.left; x < b.right; ++x) {
      if (!region(y, x)) continue;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = patch.at(c, y - b.top, x - b.left);
    }
  }
  return out;
}

namespace {

ConditioningBundle structure_text_bundle(const DiffusionModel& model, const SceneDescription& scene) {
  const int r = model.config().resolution;
  return select_streams(assemble_conditioning(scene, model.appearance, r, r), true, false, true);
}

}  // namespace

Image baseline_inpaint(const DiffusionModel& model, const Image& input, const SceneDescription& scene,
                       const Mask& region, const GuidanceWeights& w, const SamplerConfig& cfg) {
  if (mask_empty(region)) throw InvalidArgument("inpainting needs a non-empty region");
  return sample(model, structure_text_bundle(model, scene), w, cfg, region, input);
}

Image baseline_cp_denoise(const DiffusionModel& model, const Image& input, const SceneDescription& scene,
                          const Mask& region, const Image& driver, const GuidanceWeights& w,
                          const SamplerConfig& cfg) {
  const Image pasted = baseline_copy_paste(input, region, driver);
  const auto bundle = structure_text_bundle(model, scene);
  const auto z0 = model.codec->encode(image_to_tensor(pasted));
  SamplerConfig inv = cfg;
  inv.eta = 0.0;
  inv.clip_denoised = false;
  const auto zT = ddim_invert(model, z0, bundle, w, inv);
  const auto z = sample_latent(model, bundle, w, inv, latent_region(model, region), z0, zT);
  return tensor_to_image(model.codec->decode(z));
}

ObjectAppearance patch_appearance(const Image& patch, const EncoderBank& bank, int resolution) {
  Image resized(resize_bilinear(patch.pixels, resolution, resolution));
  PanopticMap map{Grid<int>(resolution, resolution, 0), Grid<int>(resolution, resolution, 0)};
  return build_scene(resized, map, bank).objects.at(0).appearance;
}

Image appearance_swap(const DiffusionModel& model, const Image& input, const SceneDescription& scene, int object,
                      const ObjectAppearance& reference, const GuidanceWeights& w, const SamplerConfig& cfg,
                      const std::optional<std::string>& prompt) {
  SceneDescription ref;
  ref.height = scene.height;
  ref.width = scene.width;
  ref.categories = scene.categories;
  SceneObject o;
  o.structure.category = 0;
  o.structure.mask = Mask(scene.height, scene.width, 1);
  o.appearance = reference;
  ref.objects.push_back(o);
  SceneDescription edited = edit_appearance(scene, object, ref, 0, 0.0, 1.0);
  if (prompt) edited.caption = prompt;
  const int r = model.config().resolution;
  return sample(model, assemble_conditioning(edited, model.appearance, r, r), w, cfg,
                edited.objects.at(static_cast<std::size_t>(object)).structure.mask, input);
}

std::vector<AppearancePair> make_appearance_pairs(const DatasetManifest& manifest, const std::vector<int>& indices,
                                                  int n, std::uint64_t seed) {
  if (indices.size() < 2) throw InvalidArgument("benchmark needs at least two samples");
  Rng rng(seed);
  auto pick = [&](int exclude) {
    int idx;
    do {
      idx = indices[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(indices.size()) - 1))];
    } while (idx == exclude);
    return idx;
  };
  auto foreground = [&](int idx) {
    const Sample s = load_sample(manifest, idx);
    std::vector<int> ids;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      if (s.objects[i].category != 0) ids.push_back(static_cast<int>(i));
    }
    return std::pair{s, ids};
  };
  std::vector<AppearancePair> pairs;
  int attempts = 0;
  while (static_cast<int>(pairs.size()) < n) {
    if (++attempts > 100 * n + 100) throw InvalidArgument("dataset has too few foreground objects");
    AppearancePair p;
    p.target_index = pick(-1);
    const auto [ts, tfg] = foreground(p.target_index);
    if (tfg.empty()) continue;
    p.target_object = tfg[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(tfg.size()) - 1))];
    p.driver_index = pick(p.target_index);
    const auto [ds, dfg] = foreground(p.driver_index);
    if (dfg.empty()) continue;
    const int d = dfg[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(dfg.size()) - 1))];
    const Box b = mask_bbox(ds.objects[static_cast<std::size_t>(d)].mask);
    const double frac = 0.25 + 0.5 * rng.uniform();
    const int h = std::clamp(static_cast<int>(std::lround(b.height() * std::sqrt(frac))), 1, b.height());
    const int w = std::clamp(static_cast<int>(std::lround(b.width() * std::sqrt(frac))), 1, b.width());
    p.driver_box.top = b.top + static_cast<int>(rng.uniform_int(0, b.height() - h));
    p.driver_box.left = b.left + static_cast<int>(rng.uniform_int(0, b.width() - w));
    p.driver_box.bottom = p.driver_box.top + h;
    p.driver_box.right = p.driver_box.left + w;
    pairs.push_back(p);
  }
  return pairs;
}

nlohmann::json BenchmarkConfig::fingerprint() const {
  const SsimParams s;
  return {{"pairs", pairs},
          {"seed", seed},
          {"split", split},
          {"sampler", {{"steps", sampler.steps}, {"eta", sampler.eta}, {"combiner", to_string(sampler.combiner)}}},
          {"guidance", {{"sS", guidance.s_structure}, {"sF", guidance.s_appearance}, {"sy", guidance.s_text}}},
          {"backend", backend},
          {"ssim", {{"window", s.window}, {"sigma", s.sigma}, {"k1", s.k1}, {"k2", s.k2}, {"L", s.dynamic_range}}}};
}

namespace {

struct Accumulator {
  std::string method;
  std::vector<Image> inputs;
  std::vector<Image> outputs;
  double l1 = 0, ssim = 0, miou = 0, lpips = 0;
};

}  // namespace

std::vector<MetricReport> run_appearance_benchmark(const DiffusionModel& model, const DatasetManifest& manifest,
                                                   const BenchmarkConfig& cfg) {
  if (cfg.pairs < 1) throw InvalidArgument("benchmark needs at least one pair");
  const auto indices = manifest.split(cfg.split);
  if (indices.size() < 2) throw InvalidArgument("dataset split too small for the benchmark");
  const auto backend = make_embedding_backend(cfg.backend);
  const EncoderBank bank(model.appearance);
  const int res = model.image_resolution();
  const auto pairs = make_appearance_pairs(manifest, indices, cfg.pairs, cfg.seed);

  std::vector<Accumulator> acc;
  for (const char* m : {"pair", kCopyPasteMethod, "inpaint", "cp_denoise"}) {
    if (!cfg.baselines && std::string(m) != "pair" && std::string(m) != kCopyPasteMethod) continue;
    acc.push_back({m, {}, {}});
  }

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const Sample a = load_sample(manifest, p.target_index);
    const Sample d = load_sample(manifest, p.driver_index);
    if (a.image.height() != res || a.image.width() != res) {
      throw ShapeMismatch("dataset resolution differs from the model resolution");
    }
    SceneDescription scene = build_scene(a.image, a.map, bank);
    scene.caption.reset();
    const Mask& region = scene.objects.at(static_cast<std::size_t>(p.target_object)).structure.mask;
    const Image driver = crop(d.image, p.driver_box);
    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(cfg.seed, i);

    std::vector<std::array<float, 3>> colors;
    std::vector<int> cats;
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      colors.push_back(static_cast<int>(o) == p.target_object
                           ? mean_color(driver, Mask(driver.height(), driver.width(), 1))
                           : mean_color(a.image, scene.objects[o].structure.mask));
      cats.push_back(scene.objects[o].structure.category);
    }

    for (auto& m : acc) {
      Image out;
      if (m.method == "pair") {
        out = appearance_swap(model, a.image, scene, p.target_object, patch_appearance(driver, bank, res),
                              cfg.guidance, sc);
      } else if (m.method == kCopyPasteMethod) {
        out = baseline_copy_paste(a.image, region, driver);
      } else if (m.method == "inpaint") {
        out = baseline_inpaint(model, a.image, scene, region, cfg.guidance, sc);
      } else {
        out = baseline_cp_denoise(model, a.image, scene, region, driver, cfg.guidance, sc);
      }
      m.l1 += l1_locality(a.image, out, region);
      m.ssim += ssim_faithfulness(driver, crop(out, mask_bbox(region)));
      m.miou += miou(color_segment(out, colors, cats), a.map.category);
      m.lpips += lpips_like(a.image, out, *backend);
      m.inputs.push_back(a.image);
      m.outputs.push_back(std::move(out));
    }
  }

  std::vector<MetricReport> reports;
  const double n = static_cast<double>(pairs.size());
  for (auto& m : acc) {
    MetricReport r;
    r.method = m.method;
    r.n = static_cast<int>(pairs.size());
    r.l1 = m.l1 / n;
    r.ssim = m.ssim / n;
    r.miou = m.miou / n;
    r.lpips = m.lpips / n;
    const std::size_t dim = backend->embed(m.inputs.front()).size();
    if (m.inputs.size() > dim) {
      const FidResult f = fid(m.inputs, m.outputs, *backend);
      r.fid = f.value;
      r.fid_regularized = f.regularized;
    }
    reports.push_back(r);
  }
  return reports;
}

std::string report_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "method,fid,l1,ssim,miou,lpips,n\n";
  auto cell = [&](const std::optional<double>& v) {
    if (v) os << std::fixed << std::setprecision(6) << *v;
  };
  for (const auto& r : reports) {
    os << r.method << ',';
    cell(r.fid);
    os << ',';
    cell(r.l1);
    os << ',';
    cell(r.ssim);
    os << ',';
    cell(r.miou);
    os << ',';
    cell(r.lpips);
    os << ',' << r.n << '\n';
  }
  return os.str();
}

nlohmann::json report_json(const std::vector<MetricReport>& reports, const BenchmarkConfig& cfg) {
  nlohmann::json methods = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& r : reports) {
    methods.push_back({{"method", r.method},
                       {"fid", opt(r.fid)},
                       {"fid_regularized", r.fid_regularized},
                       {"l1", opt(r.l1)},
                       {"ssim", opt(r.ssim)},
                       {"miou", opt(r.miou)},
                       {"lpips", opt(r.lpips)},
                       {"n", r.n},
                       {"upper_bound", r.method == kCopyPasteMethod}});
  }
  return {{"methods", methods}, {"config", cfg.fingerprint()}};
}

}  // namespace pairdiff
