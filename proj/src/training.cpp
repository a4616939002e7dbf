#include "pairdiff/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pairdiff/png_io.hpp"
#include "pairdiff/scene.hpp"

namespace pairdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written as native little-endian");

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size < 1 || steps < 0) {
    throw InvalidArgument("learning rate and batch size must be positive, steps non-negative");
  }
  dropout.validate();
  (void)NoiseSchedule::from_json(schedule);
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"steps", steps},
          {"dropout", {{"p_structure", dropout.p_structure}, {"p_appearance", dropout.p_appearance}, {"p_text", dropout.p_text}}},
          {"seed", seed},
          {"model", model.to_json()},
          {"schedule", schedule},
          {"codec", codec},
          {"appearance", appearance_config_to_json(appearance)}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  if (j.contains("dropout")) {
    const auto& d = j.at("dropout");
    c.dropout.p_structure = d.value("p_structure", c.dropout.p_structure);
    c.dropout.p_appearance = d.value("p_appearance", c.dropout.p_appearance);
    c.dropout.p_text = d.value("p_text", c.dropout.p_text);
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("schedule")) c.schedule = j.at("schedule");
  if (j.contains("codec")) c.codec = j.at("codec");
  if (j.contains("appearance")) c.appearance = appearance_config_from_json(j.at("appearance"));
  c.validate();
  return c;
}

TrainingExample make_example(const Image& image, const SceneDescription& scene, const DiffusionModel& model) {
  const int r = model.config().resolution;
  if (image.height() != model.image_resolution() || image.width() != model.image_resolution()) {
    throw ShapeMismatch("image size does not match the model resolution");
  }
  TrainingExample ex;
  ex.z0 = model.codec->encode(image_to_tensor(image))[0].contiguous();
  ex.bundle = assemble_conditioning(scene, model.appearance, r, r);
  return ex;
}

std::vector<TrainingExample> prepare_examples(const DatasetManifest& manifest, const std::vector<int>& indices,
                                              const DiffusionModel& model, const EncoderBank& bank) {
  std::vector<TrainingExample> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    Sample s = load_sample(manifest, idx);
    SceneDescription scene = build_scene(s.image, s.map, bank);
    scene.caption = s.caption;
    out.push_back(make_example(s.image, scene, model));
  }
  return out;
}

torch::Tensor diffusion_loss(const DiffusionModel& model, const std::vector<const TrainingExample*>& batch,
                             const DropoutConfig& dropout, Rng& rng) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  std::vector<torch::Tensor> zt, eps;
  std::vector<int64_t> ts;
  std::vector<ConditioningBundle> bundles;
  for (const auto* ex : batch) {
    const int t = static_cast<int>(rng.uniform_int(1, model.schedule.steps()));
    bundles.push_back(apply_dropout(ex->bundle, dropout, rng));
    auto e = gaussian(ex->z0.sizes(), rng);
    zt.push_back(forward_diffuse(ex->z0, t, e, model.schedule));
    eps.push_back(e);
    ts.push_back(t);
  }
  auto cond = encode_bundles(bundles, model.config(), *model.text);
  auto pred = model.net->predict(torch::stack(zt), cond, torch::tensor(ts, torch::kInt64));
  return torch::mse_loss(pred, torch::stack(eps));
}

double training_step(const DiffusionModel& model, torch::optim::Optimizer& optimizer,
                     const std::vector<const TrainingExample*>& batch, const DropoutConfig& dropout, Rng& rng) {
  model.net->train();
  optimizer.zero_grad();
  auto loss = diffusion_loss(model, batch, dropout, rng);
  const double v = loss.item<double>();
  if (!std::isfinite(v)) {
    throw TrainingDiverged("non-finite training loss (" + std::to_string(v) + ") on a batch of " +
                           std::to_string(batch.size()));
  }
  loss.backward();
  optimizer.step();
  return v;
}

namespace {

DiffusionModel model_from_config(const TrainingConfig& cfg, std::shared_ptr<LatentCodec> codec) {
  if (!codec) codec = make_codec(cfg.codec);
  return make_model(cfg.model, cfg.seed, NoiseSchedule::from_json(cfg.schedule), std::move(codec), cfg.appearance);
}

std::vector<std::pair<std::string, torch::Tensor>> named_parameters(const torch::nn::Module& m,
                                                                    const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : m.named_parameters()) out.emplace_back(prefix + p.key(), p.value());
  return out;
}

void load_parameters(torch::nn::Module& m, const std::string& prefix,
                     const std::map<std::string, torch::Tensor>& blobs) {
  torch::NoGradGuard g;
  for (auto& p : m.named_parameters()) {
    const auto it = blobs.find(prefix + p.key());
    if (it == blobs.end()) throw CorruptCheckpoint("missing parameter blob " + prefix + p.key());
    if (!it->second.sizes().equals(p.value().sizes())) {
      throw CorruptCheckpoint("parameter blob " + prefix + p.key() + " has the wrong shape");
    }
    p.value().copy_(it->second);
  }
}

nlohmann::json model_header(const DiffusionModel& m) {
  return {{"model", m.config().to_json()},
          {"schedule", m.schedule.to_json()},
          {"codec", codec_to_json(*m.codec)},
          {"appearance", appearance_config_to_json(m.appearance)}};
}

std::vector<std::pair<std::string, torch::Tensor>> model_blobs(const DiffusionModel& m) {
  auto blobs = named_parameters(*m.net, "net.");
  if (auto* ae = dynamic_cast<AutoencoderCodec*>(m.codec.get())) {
    auto c = named_parameters(*ae->net(), "codec.");
    blobs.insert(blobs.end(), c.begin(), c.end());
  }
  return blobs;
}

DiffusionModel model_from_checkpoint(const CheckpointData& data, std::map<std::string, torch::Tensor>& blobs) {
  const auto& h = data.header;
  try {
    auto codec = make_codec(h.at("codec"));
    auto model = make_model(ModelConfig::from_json(h.at("model")), 0, NoiseSchedule::from_json(h.at("schedule")),
                            codec, appearance_config_from_json(h.at("appearance")));
    load_parameters(*model.net, "net.", blobs);
    if (auto* ae = dynamic_cast<AutoencoderCodec*>(codec.get())) load_parameters(*ae->net(), "codec.", blobs);
    model.net->eval();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace

Trainer::Trainer(TrainingConfig cfg, std::shared_ptr<LatentCodec> codec)
    : cfg_(std::move(cfg)), model_(model_from_config(cfg_, std::move(codec))), rng_(derive_seed(cfg_.seed, 100)) {
  cfg_.validate();
  cfg_.codec = codec_to_json(*model_.codec);
  optimizer_ = std::make_unique<torch::optim::Adam>(model_.net->parameters(),
                                                    torch::optim::AdamOptions(cfg_.learning_rate));
}

double Trainer::step(const std::vector<TrainingExample>& pool) {
  if (pool.empty()) throw InvalidArgument("empty training pool");
  std::vector<const TrainingExample*> batch;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    batch.push_back(&pool[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))]);
  }
  const double loss = training_step(model_, *optimizer_, batch, cfg_.dropout, rng_);
  ++step_;
  model_.net->eval();
  return loss;
}

std::vector<double> Trainer::run(const std::vector<TrainingExample>& pool, int steps,
                                 const std::function<void(int, double)>& log) {
  std::vector<double> losses;
  for (int i = 0; i < steps; ++i) {
    losses.push_back(step(pool));
    if (log) log(step_, losses.back());
  }
  return losses;
}

void Trainer::save(const std::filesystem::path& path) const {
  CheckpointData data;
  data.header = model_header(model_);
  data.header["training"] = cfg_.to_json();
  data.header["step"] = step_;
  data.header["rng_state"] = rng_.save_state();
  data.blobs = model_blobs(model_);
  nlohmann::json adam_steps = nlohmann::json::object();
  const auto& state = optimizer_->state();
  for (const auto& [name, p] : named_parameters(*model_.net, "net.")) {
    const auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    adam_steps[name] = s.step();
    data.blobs.emplace_back("adam.exp_avg." + name, s.exp_avg());
    data.blobs.emplace_back("adam.exp_avg_sq." + name, s.exp_avg_sq());
  }
  data.header["adam_steps"] = adam_steps;
  write_checkpoint(path, data);
}

Trainer Trainer::resume(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  std::map<std::string, torch::Tensor> blobs(data.blobs.begin(), data.blobs.end());
  if (!data.header.contains("training")) throw CorruptCheckpoint("checkpoint carries no trainer state");
  DiffusionModel model = model_from_checkpoint(data, blobs);
  Trainer tr(TrainingConfig::from_json(data.header.at("training")), model.codec);
  {
    torch::NoGradGuard g;
    auto src = model.net->named_parameters();
    for (auto& p : tr.model_.net->named_parameters()) p.value().copy_(src[p.key()]);
  }
  tr.step_ = data.header.value("step", 0);
  tr.rng_.load_state(data.header.value("rng_state", std::string()));
  auto& state = tr.optimizer_->state();
  const auto& steps = data.header.value("adam_steps", nlohmann::json::object());
  for (const auto& [name, p] : named_parameters(*tr.model_.net, "net.")) {
    if (!steps.contains(name)) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(steps.at(name).get<int64_t>());
    const auto a = blobs.find("adam.exp_avg." + name);
    const auto b = blobs.find("adam.exp_avg_sq." + name);
    if (a == blobs.end() || b == blobs.end()) throw CorruptCheckpoint("missing optimizer state for " + name);
    s->exp_avg(a->second.clone());
    s->exp_avg_sq(b->second.clone());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
  tr.model_.net->eval();
  return tr;
}

namespace {

constexpr char kMagic[8] = {'P', 'A', 'I', 'R', 'C', 'K', 'P', 'T'};
constexpr char kEnd[4] = {'E', 'N', 'D', '!'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CorruptCheckpoint("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = data.header.dump();
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.blobs.size()));
  for (const auto& [name, tensor] : data.blobs) {
    auto t = tensor.detach().to(torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) put<std::int64_t>(out, d);
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    put<std::uint64_t>(out, nbytes);
    out.append(reinterpret_cast<const char*>(t.data_ptr<float>()), nbytes);
  }
  out.append(kEnd, sizeof(kEnd));
  write_file_bytes(path, std::vector<std::uint8_t>(out.begin(), out.end()));
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    const auto raw = read_file_bytes(path);
    bytes.assign(raw.begin(), raw.end());
  } catch (const Error&) {
    throw NotFound("cannot read checkpoint " + path.string());
  }
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptCheckpoint("not a checkpoint file: " + path.string());
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  CheckpointData data;
  const auto hlen = r.get<std::uint64_t>();
  const char* h = r.take(hlen);
  try {
    data.header = nlohmann::json::parse(std::string(h, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint header is not JSON: ") + e.what());
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    std::string name(r.take(nlen), nlen);
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 8) throw CorruptCheckpoint("implausible tensor rank in blob " + name);
    std::vector<int64_t> dims;
    int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      dims.push_back(r.get<std::int64_t>());
      if (dims.back() < 0) throw CorruptCheckpoint("negative dimension in blob " + name);
      numel *= dims.back();
    }
    const auto nbytes = r.get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(numel) * sizeof(float)) {
      throw CorruptCheckpoint("blob size mismatch for " + name);
    }
    const char* p = r.take(nbytes);
    auto t = torch::empty(dims, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), p, nbytes);
    data.blobs.emplace_back(std::move(name), t);
  }
  if (std::memcmp(r.take(sizeof(kEnd)), kEnd, sizeof(kEnd)) != 0 || !r.done()) {
    throw CorruptCheckpoint("checkpoint trailer missing");
  }
  return data;
}

void save_checkpoint(const DiffusionModel& model, const std::filesystem::path& path) {
  CheckpointData data;
  data.header = model_header(model);
  data.blobs = model_blobs(model);
  write_checkpoint(path, data);
}

DiffusionModel load_checkpoint(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  std::map<std::string, torch::Tensor> blobs(data.blobs.begin(), data.blobs.end());
  return model_from_checkpoint(data, blobs);
}

std::string checkpoint_fingerprint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

std::vector<double> train_autoencoder(AutoencoderCodec& codec, const torch::Tensor& images, int steps,
                                      int batch_size, double learning_rate, std::uint64_t seed) {
  if (images.dim() != 4 || images.size(0) < 1) throw InvalidArgument("autoencoder training needs a batch of images");
  auto& net = codec.net();
  Rng rng(seed);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(learning_rate));
  std::vector<double> losses;
  net->train();
  for (int s = 0; s < steps; ++s) {
    std::vector<int64_t> idx;
    for (int i = 0; i < batch_size; ++i) idx.push_back(rng.uniform_int(0, images.size(0) - 1));
    auto x = images.index_select(0, torch::tensor(idx, torch::kInt64));
    opt.zero_grad();
    auto loss = torch::mse_loss(net->decode(net->encode(x)), x);
    loss.backward();
    opt.step();
    losses.push_back(loss.item<double>());
  }
  net->eval();
  torch::NoGradGuard g;
  const auto z = net->encode(images);
  const double sd = z.std().item<double>();
  codec.set_scale(sd > 0 ? sd : 1.0);
  codec.set_latent_range(std::pair{z.min().item<double>() / codec.scale(), z.max().item<double>() / codec.scale()});
  return losses;
}

}  // namespace pairdiff
