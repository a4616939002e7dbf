#include "pairdiff/features.hpp"

#include <algorithm>
#include <cmath>

#include "pairdiff/error.hpp"
#include "pairdiff/rng.hpp"

namespace pairdiff {

bool FeatureEncoder::has_layer(int layer) const {
  const auto ls = layers();
  return std::find(ls.begin(), ls.end(), layer) != ls.end();
}

FeatureMap FeatureEncoder::extract(const Image& image, int layer) const {
  if (!has_layer(layer)) {
    throw InvalidArgument("encoder '" + id() + "' has no layer " + std::to_string(layer));
  }
  validate_image(image);
  return FeatureMap{compute(image, layer), id(), layer};
}

Tensor3 IdentityEncoder::compute(const Image& image, int) const { return image.pixels; }

std::vector<int> MeanPoolEncoder::layers() const {
  std::vector<int> out;
  for (int l = 0; l <= max_layer_; ++l) out.push_back(l);
  return out;
}

Tensor3 MeanPoolEncoder::compute(const Image& image, int layer) const {
  const int stride = 1 << layer;
  const int h = image.height() / stride;
  const int w = image.width() / stride;
  if (h < 1 || w < 1) throw InvalidArgument("meanpool layer too deep for image size");
  Tensor3 out(3, h, w);
  const float inv = 1.0f / static_cast<float>(stride * stride);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int dy = 0; dy < stride; ++dy) {
          for (int dx = 0; dx < stride; ++dx) acc += image.at(c, y * stride + dy, x * stride + dx);
        }
        out.at(c, y, x) = acc * inv;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ConvEncoder::ConvEncoder(std::uint64_t seed, std::array<int, 3> widths) {
  Rng rng(seed);
  int in = 3;
  for (int b = 0; b < 3; ++b) {
    ConvLayer& layer = blocks_[static_cast<std::size_t>(b)];
    layer.in = in;
    layer.out = widths[static_cast<std::size_t>(b)];
    layer.stride = b == 0 ? 1 : 2;
    const double scale = std::sqrt(2.0 / (9.0 * in));
    layer.weight.resize(static_cast<std::size_t>(layer.out) * in * 9);
    for (float& v : layer.weight) v = static_cast<float>(rng.normal() * scale);
    layer.bias.resize(static_cast<std::size_t>(layer.out));
    for (float& v : layer.bias) v = static_cast<float>(rng.normal() * 0.2);
    in = layer.out;
  }
}

int ConvEncoder::channels(int layer) const {
  if (layer < 1 || layer > 3) throw InvalidArgument("conv encoder has no layer " + std::to_string(layer));
  return blocks_[static_cast<std::size_t>(layer - 1)].out;
}

Tensor3 ConvEncoder::apply(const ConvLayer& layer, const Tensor3& input) {
  const int oh = (input.height - 1) / layer.stride + 1;
  const int ow = (input.width - 1) / layer.stride + 1;
  Tensor3 out(layer.out, oh, ow);
  for (int o = 0; o < layer.out; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = layer.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < layer.in; ++i) {
          const float* w = &layer.weight[(static_cast<std::size_t>(o) * layer.in + i) * 9];
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y * layer.stride + ky - 1;
            if (sy < 0 || sy >= input.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = x * layer.stride + kx - 1;
              if (sx < 0 || sx >= input.width) continue;
              acc += static_cast<double>(w[ky * 3 + kx]) * input.at(i, sy, sx);
            }
          }
        }
        out.at(o, y, x) = acc > 0.0 ? static_cast<float>(acc) : 0.0f;
      }
    }
  }
  return out;
}

Tensor3 ConvEncoder::compute(const Image& image, int layer) const {
  Tensor3 x = image.pixels;
  for (float& v : x.values) v = 2.0f * v - 1.0f;
  for (int b = 0; b < layer; ++b) x = apply(blocks_[static_cast<std::size_t>(b)], x);
  return x;
}

// ---------------------------------------------------------------------------

namespace {

void fill_normal(std::vector<float>& v, std::size_t n, double scale, Rng& rng) {
  v.resize(n);
  for (float& x : v) x = static_cast<float>(rng.normal() * scale);
}

// y = W x (+ b), W is rows × cols row-major.
void matvec(const std::vector<float>& w, const float* x, int rows, int cols, float* y,
            const std::vector<float>* b = nullptr) {
  for (int r = 0; r < rows; ++r) {
    double acc = b ? (*b)[static_cast<std::size_t>(r)] : 0.0;
    const float* row = &w[static_cast<std::size_t>(r) * cols];
    for (int c = 0; c < cols; ++c) acc += static_cast<double>(row[c]) * x[c];
    y[r] = static_cast<float>(acc);
  }
}

void layer_norm(const float* x, int n, float* y) {
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += x[i];
  mean /= n;
  double var = 0.0;
  for (int i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < n; ++i) y[i] = static_cast<float>((x[i] - mean) * inv);
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x / std::sqrt(2.0f))); }

}  // namespace

PatchAttentionEncoder::PatchAttentionEncoder(std::uint64_t seed, int dim, int depth, int patch)
    : dim_(dim), depth_(depth), patch_(patch), hidden_(2 * dim) {
  Rng rng(seed);
  const int in = 3 * patch * patch;
  fill_normal(embed_w_, static_cast<std::size_t>(dim) * in, 1.0 / std::sqrt(in), rng);
  fill_normal(embed_b_, static_cast<std::size_t>(dim), 0.1, rng);
  const double s = 1.0 / std::sqrt(dim);
  const double residual = 1.0 / std::sqrt(2.0 * depth);
  const auto d2 = static_cast<std::size_t>(dim) * dim;
  const auto dh = static_cast<std::size_t>(dim) * hidden_;
  blocks_.resize(static_cast<std::size_t>(depth));
  for (auto& b : blocks_) {
    fill_normal(b.wq, d2, s, rng);
    fill_normal(b.wk, d2, s, rng);
    fill_normal(b.wv, d2, s, rng);
    fill_normal(b.wo, d2, s * residual, rng);
    fill_normal(b.w1, dh, s, rng);
    fill_normal(b.b1, static_cast<std::size_t>(hidden_), 0.1, rng);
    fill_normal(b.w2, dh, residual / std::sqrt(hidden_), rng);
    fill_normal(b.b2, static_cast<std::size_t>(dim), 0.0, rng);
  }
}

std::vector<int> PatchAttentionEncoder::layers() const {
  std::vector<int> out;
  for (int l = 1; l <= depth_; ++l) out.push_back(l);
  return out;
}

Tensor3 PatchAttentionEncoder::compute(const Image& image, int layer) const {
  const int gh = std::max(1, image.height() / patch_);
  const int gw = std::max(1, image.width() / patch_);
  const int n = gh * gw;
  const int d = dim_;
  const int in = 3 * patch_ * patch_;
  std::vector<float> tokens(static_cast<std::size_t>(n) * d);
  std::vector<float> patch(static_cast<std::size_t>(in));

  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      int k = 0;
      for (int c = 0; c < 3; ++c) {
        for (int py = 0; py < patch_; ++py) {
          for (int px = 0; px < patch_; ++px) {
            const int y = std::min(gy * patch_ + py, image.height() - 1);
            const int x = std::min(gx * patch_ + px, image.width() - 1);
            patch[static_cast<std::size_t>(k++)] = 2.0f * image.at(c, y, x) - 1.0f;
          }
        }
      }
      float* tok = &tokens[static_cast<std::size_t>(gy * gw + gx) * d];
      matvec(embed_w_, patch.data(), d, in, tok, &embed_b_);
      // Fixed 2-D sinusoidal position code.
      for (int i = 0; i < d; ++i) {
        const double freq = std::pow(10.0, -static_cast<double>(i / 4) / (d / 4.0));
        const double pos = (i % 2 == 0) ? gy : gx;
        tok[i] += static_cast<float>(0.1 * ((i / 2) % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq)));
      }
    }
  }

  std::vector<float> normed(static_cast<std::size_t>(n) * d);
  std::vector<float> q(normed.size()), k(normed.size()), v(normed.size()), mixed(normed.size());
  std::vector<float> scores(static_cast<std::size_t>(n));
  std::vector<float> hidden(static_cast<std::size_t>(hidden_));
  std::vector<float> delta(static_cast<std::size_t>(d));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  for (int b = 0; b < layer; ++b) {
    const Block& blk = blocks_[static_cast<std::size_t>(b)];
    for (int t = 0; t < n; ++t) {
      const auto off = static_cast<std::size_t>(t) * d;
      layer_norm(&tokens[off], d, &normed[off]);
      matvec(blk.wq, &normed[off], d, d, &q[off]);
      matvec(blk.wk, &normed[off], d, d, &k[off]);
      matvec(blk.wv, &normed[off], d, d, &v[off]);
    }
    for (int t = 0; t < n; ++t) {
      const auto off = static_cast<std::size_t>(t) * d;
      double mx = -1e300;
      for (int u = 0; u < n; ++u) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += static_cast<double>(q[off + i]) * k[static_cast<std::size_t>(u) * d + i];
        scores[static_cast<std::size_t>(u)] = static_cast<float>(dot * scale);
        mx = std::max(mx, dot * scale);
      }
      double z = 0.0;
      for (float& s : scores) {
        s = static_cast<float>(std::exp(s - mx));
        z += s;
      }
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int u = 0; u < n; ++u) acc += static_cast<double>(scores[static_cast<std::size_t>(u)]) * v[static_cast<std::size_t>(u) * d + i];
        mixed[off + i] = static_cast<float>(acc / z);
      }
    }
    for (int t = 0; t < n; ++t) {
      const auto off = static_cast<std::size_t>(t) * d;
      matvec(blk.wo, &mixed[off], d, d, delta.data());
      for (int i = 0; i < d; ++i) tokens[off + i] += delta[static_cast<std::size_t>(i)];
      layer_norm(&tokens[off], d, &normed[off]);
      matvec(blk.w1, &normed[off], hidden_, d, hidden.data(), &blk.b1);
      for (float& h : hidden) h = gelu(h);
      matvec(blk.w2, hidden.data(), d, hidden_, delta.data(), &blk.b2);
      for (int i = 0; i < d; ++i) tokens[off + i] += delta[static_cast<std::size_t>(i)];
    }
  }

  Tensor3 out(d, gh, gw);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      for (int i = 0; i < d; ++i) out.at(i, gy, gx) = tokens[static_cast<std::size_t>(gy * gw + gx) * d + i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json appearance_config_to_json(const AppearanceConfig& cfg) {
  auto arr = nlohmann::json::array();
  for (const auto& s : cfg.slots) arr.push_back({{"encoder", s.encoder_id}, {"layer", s.layer}});
  return arr;
}

AppearanceConfig appearance_config_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument("appearance config needs exactly 3 slots");
  AppearanceConfig cfg;
  for (std::size_t i = 0; i < 3; ++i) {
    cfg.slots[i] = LayerRef{j[i].at("encoder").get<std::string>(), j[i].at("layer").get<int>()};
  }
  return cfg;
}

EncoderBank::EncoderBank(AppearanceConfig config) : config_(std::move(config)) {
  add(std::make_shared<IdentityEncoder>());
  add(std::make_shared<MeanPoolEncoder>());
  add(std::make_shared<ConvEncoder>());
  add(std::make_shared<PatchAttentionEncoder>());
}

void EncoderBank::add(std::shared_ptr<const FeatureEncoder> encoder) {
  const auto id = encoder->id();
  encoders_[id] = std::move(encoder);
}

const FeatureEncoder& EncoderBank::get(const std::string& id) const {
  const auto it = encoders_.find(id);
  if (it == encoders_.end()) throw InvalidArgument("unknown feature encoder '" + id + "'");
  return *it->second;
}

std::array<int, 3> EncoderBank::slot_channels() const {
  std::array<int, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& slot = config_.slots[i];
    const auto& enc = get(slot.encoder_id);
    if (!enc.has_layer(slot.layer)) {
      throw InvalidArgument("encoder '" + slot.encoder_id + "' has no layer " + std::to_string(slot.layer));
    }
    out[i] = enc.channels(slot.layer);
  }
  return out;
}

}  // namespace pairdiff
