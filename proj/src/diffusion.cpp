#include "pairdiff/diffusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>

#include "pairdiff/error.hpp"
#include "pairdiff/shapes.hpp"

namespace pairdiff {

namespace nn = torch::nn;

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 1) throw InvalidArgument("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw InvalidArgument("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  alpha_bar_.resize(static_cast<std::size_t>(steps) + 1);
  alpha_bar_[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double beta =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta);
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) throw InvalidArgument("timestep out of range: " + std::to_string(t));
  return alpha_bar_[static_cast<std::size_t>(t)];
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"steps", steps_}, {"beta_start", beta_start_}, {"beta_end", beta_end_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  return NoiseSchedule(j.value("steps", 1000), j.value("beta_start", 1e-4), j.value("beta_end", 2e-2));
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.steps()) {
    throw InvalidArgument("timestep out of range: " + std::to_string(t));
  }
  if (!z0.sizes().equals(eps.sizes())) throw ShapeMismatch("noise shape differs from z0");
  const double ab = schedule.alpha_bar(t);
  return z0 * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

BagOfWordsText::BagOfWordsText(std::vector<std::string> vocabulary) : vocabulary_(std::move(vocabulary)) {
  for (auto& w : vocabulary_) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
  }
}

std::vector<std::string> BagOfWordsText::default_vocabulary() {
  std::vector<std::string> v = shape_categories();
  for (const auto& c : palette()) v.push_back(c.name);
  return v;
}

std::vector<float> BagOfWordsText::encode(const std::string& text) const {
  std::vector<float> out(vocabulary_.size(), 0.0f);
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const auto it = std::find(vocabulary_.begin(), vocabulary_.end(), word);
    if (it != vocabulary_.end()) out[static_cast<std::size_t>(it - vocabulary_.begin())] = 1.0f;
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isalpha(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::string to_string(DenoiserVariant v) {
  return v == DenoiserVariant::input_concat ? "input_concat" : "control";
}

DenoiserVariant denoiser_variant_from_string(const std::string& s) {
  if (s == "input_concat" || s == "input-concat") return DenoiserVariant::input_concat;
  if (s == "control" || s == "control-module") return DenoiserVariant::control;
  throw InvalidArgument("unknown denoiser variant: " + s);
}

int ModelConfig::input_concat_channels() const {
  int c = latent_channels + 2 + 3;
  for (int a : appearance_channels) c += a + 2;
  return c;
}

ConditioningShape ModelConfig::conditioning_shape() const {
  return ConditioningShape{resolution, resolution, appearance_channels};
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"latent_channels", latent_channels},
          {"resolution", resolution},
          {"widths", widths},
          {"appearance_channels", appearance_channels},
          {"embed_dim", embed_dim},
          {"vocabulary", vocabulary}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = denoiser_variant_from_string(j.value("variant", std::string("input_concat")));
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.resolution = j.value("resolution", c.resolution);
  if (j.contains("widths")) c.widths = j.at("widths").get<std::array<int, 3>>();
  if (j.contains("appearance_channels")) {
    c.appearance_channels = j.at("appearance_channels").get<std::array<int, 3>>();
  }
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  if (j.contains("vocabulary")) c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  for (int w : c.widths) {
    if (w <= 0 || w % 8 != 0) throw InvalidArgument("model widths must be positive multiples of 8");
  }
  if (c.resolution % 4 != 0 || c.resolution < 8) {
    throw InvalidArgument("model resolution must be a multiple of 4 and at least 8");
  }
  return c;
}

torch::Tensor tensor3_to_torch(const Tensor3& t) {
  return torch::from_blob(const_cast<float*>(t.values.data()), {t.channels, t.height, t.width},
                          torch::kFloat32)
      .clone();
}

torch::Tensor image_to_tensor(const Image& image) { return tensor3_to_torch(image.pixels).unsqueeze(0); }

Image tensor_to_image(const torch::Tensor& t) {
  torch::Tensor x = t.detach().to(torch::kFloat32).contiguous();
  if (x.dim() == 4) {
    if (x.size(0) != 1) throw ShapeMismatch("expected a single image");
    x = x[0];
  }
  if (x.dim() != 3 || x.size(0) != 3) throw ShapeMismatch("expected a 3×H×W tensor");
  Tensor3 out(3, static_cast<int>(x.size(1)), static_cast<int>(x.size(2)));
  x = x.contiguous();
  std::copy(x.data_ptr<float>(), x.data_ptr<float>() + x.numel(), out.values.begin());
  return clamp_image(std::move(out));
}

torch::Tensor mask_to_tensor(const Mask& m) {
  torch::Tensor t = torch::empty({1, 1, m.height(), m.width()}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i] ? 1.0f : 0.0f;
  return t;
}

ConditioningBatch make_conditioning_batch(const std::vector<NumericConditioning>& items,
                                          const TextEncoder& text) {
  if (items.empty()) throw InvalidArgument("empty conditioning batch");
  std::vector<torch::Tensor> s, y, p;
  std::array<std::vector<torch::Tensor>, 3> f;
  for (const auto& it : items) {
    if (it.appearance.size() != 3) throw InvalidArgument("conditioning needs three appearance slots");
    s.push_back(tensor3_to_torch(it.structure));
    for (int l = 0; l < 3; ++l) f[l].push_back(tensor3_to_torch(it.appearance[l]));
    const auto e = text.encode(it.text);
    y.push_back(torch::tensor(e, torch::kFloat32));
    p.push_back(torch::tensor(std::vector<float>(it.present.begin(), it.present.end()), torch::kFloat32));
  }
  ConditioningBatch b;
  b.structure = torch::stack(s);
  for (int l = 0; l < 3; ++l) b.appearance.push_back(torch::stack(f[l]));
  b.text = torch::stack(y);
  b.present = torch::stack(p);
  return b;
}

ConditioningBatch encode_bundles(const std::vector<ConditioningBundle>& bundles, const ModelConfig& cfg,
                                 const TextEncoder& text) {
  std::vector<NumericConditioning> items;
  items.reserve(bundles.size());
  for (const auto& b : bundles) items.push_back(encode_null(b, cfg.conditioning_shape()));
  return make_conditioning_batch(items, text);
}

int64_t DenoiserModelImpl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

namespace {

nn::Conv2d conv3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

nn::Conv2d zero_conv(int in, int out, int kernel = 1) {
  nn::Conv2d c(nn::Conv2dOptions(in, out, kernel).padding(kernel / 2));
  torch::NoGradGuard g;
  c->weight.zero_();
  c->bias.zero_();
  return c;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / half);
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

struct ResBlockImpl : nn::Module {
  ResBlockImpl(int in, int out, int emb_dim)
      : norm1(nn::GroupNormOptions(8, in)), conv1(conv3(in, out)), emb(emb_dim, out),
        norm2(nn::GroupNormOptions(8, out)), conv2(conv3(out, out)) {
    register_module("norm1", norm1);
    register_module("conv1", conv1);
    register_module("emb", emb);
    register_module("norm2", norm2);
    register_module("conv2", conv2);
    if (in != out) {
      skip = nn::Conv2d(nn::Conv2dOptions(in, out, 1));
      register_module("skip", skip);
    }
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& e) {
    auto h = conv1(torch::silu(norm1(x)));
    h = h + emb(torch::silu(e)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(torch::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
  }

  nn::GroupNorm norm1;
  nn::Conv2d conv1;
  nn::Linear emb;
  nn::GroupNorm norm2;
  nn::Conv2d conv2;
  nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

struct Skips {
  torch::Tensor h1, h2, h3, mid;
};

// Three-level UNet trunk shared by both variants.
struct UNetTrunkImpl : nn::Module {
  UNetTrunkImpl(int in_ch, int out_ch, std::array<int, 3> w, int emb_dim)
      : in_conv(conv3(in_ch, w[0])),
        d1(w[0], w[0], emb_dim), down1(conv3(w[0], w[0], 2)),
        d2(w[0], w[1], emb_dim), down2(conv3(w[1], w[1], 2)),
        d3(w[1], w[2], emb_dim), mid(w[2], w[2], emb_dim),
        u3(2 * w[2], w[2], emb_dim), up3(conv3(w[2], w[1])),
        u2(2 * w[1], w[1], emb_dim), up2(conv3(w[1], w[0])),
        u1(2 * w[0], w[0], emb_dim),
        out_norm(nn::GroupNormOptions(8, w[0])), out_conv(zero_conv(w[0], out_ch, 3)) {
    register_module("in_conv", in_conv);
    register_module("d1", d1);
    register_module("down1", down1);
    register_module("d2", d2);
    register_module("down2", down2);
    register_module("d3", d3);
    register_module("mid", mid);
    register_module("u3", u3);
    register_module("up3", up3);
    register_module("u2", u2);
    register_module("up2", up2);
    register_module("u1", u1);
    register_module("out_norm", out_norm);
    register_module("out_conv", out_conv);
  }

  Skips encode(const torch::Tensor& x, const torch::Tensor& e) {
    Skips s;
    s.h1 = d1(in_conv(x), e);
    s.h2 = d2(down1(s.h1), e);
    s.h3 = d3(down2(s.h2), e);
    s.mid = mid(s.h3, e);
    return s;
  }

  torch::Tensor decode(const Skips& s, const torch::Tensor& e) {
    namespace F = torch::nn::functional;
    const auto up = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);
    auto h = u3(torch::cat({s.mid, s.h3}, 1), e);
    h = up3(F::interpolate(h, up));
    h = u2(torch::cat({h, s.h2}, 1), e);
    h = up2(F::interpolate(h, up));
    h = u1(torch::cat({h, s.h1}, 1), e);
    return out_conv(torch::silu(out_norm(h)));
  }

  nn::Conv2d in_conv;
  ResBlock d1;
  nn::Conv2d down1;
  ResBlock d2;
  nn::Conv2d down2;
  ResBlock d3;
  ResBlock mid;
  ResBlock u3;
  nn::Conv2d up3;
  ResBlock u2;
  nn::Conv2d up2;
  ResBlock u1;
  nn::GroupNorm out_norm;
  nn::Conv2d out_conv;
};
TORCH_MODULE(UNetTrunk);

struct TimeEmbedImpl : nn::Module {
  TimeEmbedImpl(int dim) : dim(dim), l1(dim, dim), l2(dim, dim) {
    register_module("l1", l1);
    register_module("l2", l2);
  }
  torch::Tensor forward(const torch::Tensor& t) {
    return l2(torch::silu(l1(timestep_embedding(t, dim))));
  }
  int dim;
  nn::Linear l1;
  nn::Linear l2;
};
TORCH_MODULE(TimeEmbed);

nn::Linear linear_no_bias(int in, int out) { return nn::Linear(nn::LinearOptions(in, out).bias(false)); }

void check_conditioning(const ModelConfig& cfg, const torch::Tensor& z, const ConditioningBatch& c) {
  if (z.dim() != 4 || z.size(1) != cfg.latent_channels || z.size(2) != cfg.resolution ||
      z.size(3) != cfg.resolution) {
    throw ShapeMismatch("latent shape does not match the model configuration");
  }
  if (c.size() != z.size(0)) throw ShapeMismatch("conditioning batch size differs from latent batch");
  if (c.structure.size(2) != cfg.resolution || c.structure.size(3) != cfg.resolution) {
    throw ShapeMismatch("conditioning resolution does not match the model resolution");
  }
  for (int l = 0; l < 3; ++l) {
    if (c.appearance[l].size(1) != cfg.appearance_channels[l] + 2) {
      throw ShapeMismatch("appearance slot channel count does not match the model");
    }
  }
  if (c.text.size(1) != static_cast<int64_t>(cfg.vocabulary.size())) {
    throw ShapeMismatch("text embedding width does not match the model vocabulary");
  }
}

torch::Tensor flag_planes(const ConditioningBatch& c, int64_t h, int64_t w) {
  return c.present.unsqueeze(-1).unsqueeze(-1).expand({c.size(), 3, h, w});
}

}  // namespace

class InputConcatUNet : public DenoiserModelImpl {
 public:
  explicit InputConcatUNet(const ModelConfig& cfg)
      : cfg_(cfg), time_(cfg.embed_dim),
        text_(linear_no_bias(static_cast<int>(cfg.vocabulary.size()), cfg.embed_dim)),
        flags_(linear_no_bias(3, cfg.embed_dim)),
        trunk_(cfg.input_concat_channels(), cfg.latent_channels, cfg.widths, cfg.embed_dim) {
    register_module("time", time_);
    register_module("text", text_);
    register_module("flags", flags_);
    register_module("trunk", trunk_);
  }

  torch::Tensor predict(const torch::Tensor& z, const ConditioningBatch& c, const torch::Tensor& t) override {
    check_conditioning(cfg_, z, c);
    auto x = torch::cat({z, c.structure, c.appearance[0], c.appearance[1], c.appearance[2],
                         flag_planes(c, z.size(2), z.size(3))},
                        1);
    auto e = time_(t) + text_(c.text) + flags_(c.present);
    return trunk_->decode(trunk_->encode(x, e), e);
  }

  const ModelConfig& config() const override { return cfg_; }

 private:
  ModelConfig cfg_;
  TimeEmbed time_;
  nn::Linear text_;
  nn::Linear flags_;
  UNetTrunk trunk_;
};

class ControlUNet : public DenoiserModelImpl {
 public:
  explicit ControlUNet(const ModelConfig& cfg)
      : cfg_(cfg), time_(cfg.embed_dim), base_(cfg.latent_channels, cfg.latent_channels, cfg.widths, cfg.embed_dim),
        ctime_(cfg.embed_dim),
        ctext_(linear_no_bias(static_cast<int>(cfg.vocabulary.size()), cfg.embed_dim)),
        cflags_(linear_no_bias(3, cfg.embed_dim)),
        c_in_(conv3(cfg.latent_channels, cfg.widths[0])),
        hint_(zero_conv(cfg.appearance_channels[0] + 2 + 3, cfg.widths[0], 3)),
        c1_(cfg.widths[0], cfg.widths[0], cfg.embed_dim),
        inject2_(nn::Conv2dOptions(cfg.appearance_channels[1] + 2, cfg.widths[0], 1)),
        cdown1_(conv3(cfg.widths[0], cfg.widths[0], 2)),
        c2_(cfg.widths[0], cfg.widths[1], cfg.embed_dim),
        inject3_(nn::Conv2dOptions(cfg.appearance_channels[2] + 2, cfg.widths[1], 1)),
        cdown2_(conv3(cfg.widths[1], cfg.widths[1], 2)),
        c3_(cfg.widths[1], cfg.widths[2], cfg.embed_dim),
        cmid_(cfg.widths[2], cfg.widths[2], cfg.embed_dim),
        z1_(zero_conv(cfg.widths[0], cfg.widths[0])),
        z2_(zero_conv(cfg.widths[1], cfg.widths[1])),
        z3_(zero_conv(cfg.widths[2], cfg.widths[2])),
        zm_(zero_conv(cfg.widths[2], cfg.widths[2])) {
    register_module("time", time_);
    register_module("base", base_);
    register_module("ctime", ctime_);
    register_module("ctext", ctext_);
    register_module("cflags", cflags_);
    register_module("c_in", c_in_);
    register_module("hint", hint_);
    register_module("c1", c1_);
    register_module("inject2", inject2_);
    register_module("cdown1", cdown1_);
    register_module("c2", c2_);
    register_module("inject3", inject3_);
    register_module("cdown2", cdown2_);
    register_module("c3", c3_);
    register_module("cmid", cmid_);
    register_module("z1", z1_);
    register_module("z2", z2_);
    register_module("z3", z3_);
    register_module("zm", zm_);
  }

  torch::Tensor predict(const torch::Tensor& z, const ConditioningBatch& c, const torch::Tensor& t) override {
    check_conditioning(cfg_, z, c);
    namespace F = torch::nn::functional;
    auto e = time_(t);
    Skips s = base_->encode(z, e);

    auto ce = ctime_(t) + ctext_(c.text) + cflags_(c.present);
    auto hint = torch::cat({c.appearance[0], flag_planes(c, z.size(2), z.size(3))}, 1);
    auto h1 = c1_(c_in_(z) + hint_(hint), ce) + inject2_(c.appearance[1]);
    auto g3 = F::avg_pool2d(c.appearance[2], F::AvgPool2dFuncOptions(2));
    auto h2 = c2_(cdown1_(h1), ce) + inject3_(g3);
    auto h3 = c3_(cdown2_(h2), ce);
    auto hm = cmid_(h3, ce);

    s.h1 = s.h1 + z1_(h1);
    s.h2 = s.h2 + z2_(h2);
    s.h3 = s.h3 + z3_(h3);
    s.mid = s.mid + zm_(hm);
    return base_->decode(s, e);
  }

  const ModelConfig& config() const override { return cfg_; }

 private:
  ModelConfig cfg_;
  TimeEmbed time_;
  UNetTrunk base_;
  TimeEmbed ctime_;
  nn::Linear ctext_;
  nn::Linear cflags_;
  nn::Conv2d c_in_;
  nn::Conv2d hint_;
  ResBlock c1_;
  nn::Conv2d inject2_;
  nn::Conv2d cdown1_;
  ResBlock c2_;
  nn::Conv2d inject3_;
  nn::Conv2d cdown2_;
  ResBlock c3_;
  ResBlock cmid_;
  nn::Conv2d z1_;
  nn::Conv2d z2_;
  nn::Conv2d z3_;
  nn::Conv2d zm_;
};

std::shared_ptr<DenoiserModelImpl> make_denoiser(const ModelConfig& cfg) {
  if (cfg.variant == DenoiserVariant::input_concat) return std::make_shared<InputConcatUNet>(cfg);
  return std::make_shared<ControlUNet>(cfg);
}

AutoencoderNetImpl::AutoencoderNetImpl(int latent_channels, int width) {
  encoder = nn::Sequential(conv3(3, width), nn::SiLU(),
                           nn::Conv2d(nn::Conv2dOptions(width, width, 4).stride(2).padding(1)), nn::SiLU(),
                           conv3(width, latent_channels));
  // Each latent cell decodes to its own 2×2 block plus a 2-pixel halo, which
  // keeps masked latent edits from bleeding far past the mask.
  decoder = nn::Sequential(nn::Conv2d(nn::Conv2dOptions(latent_channels, width, 1)), nn::SiLU(),
                           nn::ConvTranspose2d(nn::ConvTranspose2dOptions(width, width, 2).stride(2)), nn::SiLU(),
                           conv3(width, width), nn::SiLU(), conv3(width, 3));
  register_module("encoder", encoder);
  register_module("decoder", decoder);
}

torch::Tensor AutoencoderNetImpl::encode(const torch::Tensor& x) { return encoder->forward(x * 2 - 1); }

torch::Tensor AutoencoderNetImpl::decode(const torch::Tensor& z) { return (decoder->forward(z) + 1) / 2; }

AutoencoderCodec::AutoencoderCodec(int latent_channels, int width)
    : latent_channels_(latent_channels), width_(width), net_(latent_channels, width) {
  net_->eval();
}

torch::Tensor AutoencoderCodec::encode(const torch::Tensor& images) const {
  torch::NoGradGuard g;
  return net_->encode(images) / scale_;
}

torch::Tensor AutoencoderCodec::decode(const torch::Tensor& latents) const {
  torch::NoGradGuard g;
  return net_->decode(latents * scale_);
}

std::shared_ptr<LatentCodec> make_codec(const nlohmann::json& cfg) {
  const std::string type = cfg.value("type", std::string("identity"));
  if (type == "identity") return std::make_shared<IdentityCodec>();
  if (type == "autoencoder") {
    auto c = std::make_shared<AutoencoderCodec>(cfg.value("latent_channels", 4), cfg.value("width", 32));
    c->set_scale(cfg.value("scale", 1.0));
    if (cfg.contains("range")) c->set_latent_range(std::pair{cfg["range"].at(0).get<double>(), cfg["range"].at(1).get<double>()});
    return c;
  }
  throw InvalidArgument("unknown codec: " + type);
}

nlohmann::json codec_to_json(const LatentCodec& codec) {
  if (const auto* ae = dynamic_cast<const AutoencoderCodec*>(&codec)) {
    nlohmann::json j{{"type", "autoencoder"},
                     {"latent_channels", ae->latent_channels()},
                     {"width", ae->width()},
                     {"scale", ae->scale()}};
    if (const auto r = ae->latent_range()) j["range"] = {r->first, r->second};
    return j;
  }
  return {{"type", codec.id()}};
}

DiffusionModel make_model(const ModelConfig& cfg, std::uint64_t seed, const NoiseSchedule& schedule,
                          std::shared_ptr<LatentCodec> codec, const AppearanceConfig& appearance) {
  if (codec->latent_channels() != cfg.latent_channels) {
    throw InvalidArgument("codec latent channels differ from the model configuration");
  }
  torch::manual_seed(seed);
  DiffusionModel m{make_denoiser(cfg), schedule, std::move(codec),
                   std::make_shared<BagOfWordsText>(cfg.vocabulary), appearance};
  return m;
}

torch::Tensor gaussian(at::IntArrayRef shape, Rng& rng) {
  torch::Tensor t = torch::empty(shape, torch::kFloat32);
  float* p = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<float>(rng.normal());
  return t;
}

void init_torch_runtime() {
  static std::once_flag once;
  std::call_once(once, [] {
    torch::set_num_threads(1);
    try {
      torch::set_num_interop_threads(1);
    } catch (const c10::Error&) {
    }
  });
}

}  // namespace pairdiff
