#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pairdiff/error.hpp"
#include "pairdiff/eval.hpp"
#include "pairdiff/pipeline.hpp"
#include "pairdiff/png_io.hpp"
#include "pairdiff/service.hpp"
#include "pairdiff/training.hpp"

using namespace pairdiff;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Guidance {
  std::optional<double> sS, sF, sy;

  void add(CLI::App* cmd) {
    cmd->add_option("--sS", sS, "structure guidance s_S");
    cmd->add_option("--sF", sF, "appearance guidance s_F");
    cmd->add_option("--sy", sy, "text guidance s_y");
  }
  GuidanceWeights apply(GuidanceWeights w) const {
    if (sS) w.s_structure = *sS;
    if (sF) w.s_appearance = *sF;
    if (sy) w.s_text = *sy;
    w.validate();
    return w;
  }
};

struct SamplerFlags {
  std::optional<int> steps;
  std::optional<double> eta;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> combiner;

  void add(CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--steps", steps, "DDIM steps");
    cmd->add_option("--eta", eta, "DDIM eta in [0,1]");
    if (with_seed) cmd->add_option("--seed", seed, "sampling seed");
    cmd->add_option("--combiner", combiner, "factorized or joint")->check(CLI::IsMember({"factorized", "joint"}));
  }
  SamplerConfig apply(SamplerConfig c) const {
    if (steps) c.steps = *steps;
    if (eta) c.eta = *eta;
    if (seed) c.seed = *seed;
    if (combiner) c.combiner = combiner_from_string(*combiner);
    return c;
  }
};

// Default checkpoint from the PAIR_CONFIG service config.
std::string default_checkpoint() {
  const auto p = config_path_from_env(std::nullopt);
  if (!p || !fs::exists(*p)) return {};
  return load_service_config(p).checkpoint;
}

std::string require_checkpoint(const std::string& flag) {
  const std::string c = flag.empty() ? default_checkpoint() : flag;
  if (c.empty()) throw InvalidArgument("--checkpoint is required (or set PAIR_CONFIG)");
  return c;
}

int parse_category(const std::string& s) {
  const auto& names = shape_categories();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == s) return static_cast<int>(i);
  }
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("unknown category: " + s);
}

json load_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw NotFound("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void emit(bool as_json, const json& j, const std::string& text) {
  if (as_json) {
    std::cout << j.dump() << std::endl;
  } else if (!text.empty()) {
    std::cout << text << std::endl;
  }
}

double image_std(const Image& img) {
  double s = 0, s2 = 0;
  for (float v : img.pixels.values) {
    s += v;
    s2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(img.pixels.values.size());
  return std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
}

// Scene paths in specs are tried as given, then relative to the spec file.
class CliScenes {
 public:
  CliScenes(const EncoderBank& bank, fs::path base) : bank_(bank), base_(std::move(base)) {}

  const LoadedScene& get(const std::string& ref) {
    const fs::path p = locate(ref);
    const std::string key = p.lexically_normal().string();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, load_scene_with_image(p, bank_)).first;
    return it->second;
  }

 private:
  fs::path locate(const std::string& ref) const {
    const fs::path p(ref);
    if (p.empty()) throw InvalidArgument("edit spec names no scene");
    if (fs::exists(p) || p.is_absolute() || base_.empty()) return p;
    return base_ / p;
  }
  const EncoderBank& bank_;
  fs::path base_;
  std::map<std::string, LoadedScene> cache_;
};

int cmd_data_gen(int n, std::uint64_t seed, const std::string& out, GeneratorConfig gc, bool as_json) {
  if (n < 0) throw InvalidArgument("--n must be non-negative");
  const auto m = generate_dataset(gc, n, seed, out);
  json j = m.to_json();
  j["root"] = out;
  emit(as_json, j, "wrote " + std::to_string(m.count) + " samples to " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_torch_runtime();
  CLI::App app{"Object-level image editing with paired structure/appearance diffusion"};
  app.require_subcommand(1);
  bool as_json = false;

  // data gen
  auto* data = app.add_subcommand("data", "dataset utilities");
  data->require_subcommand(1);
  auto* gen = data->add_subcommand("gen", "generate the synthetic shapes dataset");
  int gen_n = 2000;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  GeneratorConfig gen_cfg;
  gen->add_option("--n", gen_n, "number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--height", gen_cfg.height, "canvas height")->capture_default_str();
  gen->add_option("--width", gen_cfg.width, "canvas width")->capture_default_str();
  gen->add_option("--min-size", gen_cfg.min_size, "smallest object size in pixels")->capture_default_str();
  gen->add_option("--max-size", gen_cfg.max_size, "largest object size in pixels")->capture_default_str();
  gen->add_option("--min-objects", gen_cfg.min_objects)->capture_default_str();
  gen->add_option("--max-objects", gen_cfg.max_objects)->capture_default_str();
  gen->add_flag("--json", as_json, "machine-readable output");

  // train
  auto* train = app.add_subcommand("train", "train a toy denoiser");
  std::string train_config, train_data, train_out, train_resume, train_variant, train_codec;
  std::optional<int> train_steps, train_batch, train_ae_steps;
  std::optional<double> train_lr;
  std::optional<std::uint64_t> train_seed;
  int log_every = 100;
  train->add_option("--config", train_config, "training config JSON");
  train->add_option("--data", train_data, "dataset directory");
  train->add_option("--out", train_out, "checkpoint path");
  train->add_option("--resume", train_resume, "resume from a trainer checkpoint");
  train->add_option("--steps", train_steps, "total optimizer steps");
  train->add_option("--batch", train_batch, "batch size");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--variant", train_variant, "input_concat or control");
  train->add_option("--codec", train_codec, "identity or autoencoder")
      ->check(CLI::IsMember({"identity", "autoencoder"}));
  train->add_option("--ae-steps", train_ae_steps, "autoencoder training steps");
  train->add_option("--log-every", log_every, "loss log interval")->capture_default_str();
  train->add_flag("--json", as_json, "machine-readable output");

  // sample
  auto* samp = app.add_subcommand("sample", "sample an image for a scene (or unconditionally)");
  std::string samp_ckpt, samp_scene, samp_out, samp_mask;
  std::optional<std::string> samp_prompt;
  Guidance samp_g;
  SamplerFlags samp_s;
  samp->add_option("--checkpoint", samp_ckpt, "model checkpoint");
  samp->add_option("--scene", samp_scene, "scene JSON to condition on");
  samp->add_option("--prompt", samp_prompt, "text condition");
  samp->add_option("--mask", samp_mask, "region mask PNG (requires --scene)");
  samp->add_option("--out", samp_out, "output PNG")->required();
  samp_g.add(samp);
  samp_s.add(samp);
  samp->add_flag("--json", as_json, "machine-readable output");

  // edit
  auto* edit = app.add_subcommand("edit", "apply an EditSpec and sample the result");
  std::string edit_spec_path, edit_ckpt, edit_out, edit_kind, edit_scene, edit_new_mask, edit_region,
      edit_category, edit_ref_scene;
  std::optional<int> edit_target, edit_ref_object;
  std::optional<double> edit_a0, edit_a1, edit_lambda;
  std::optional<std::string> edit_prompt;
  Guidance edit_g;
  SamplerFlags edit_s;
  edit->add_option("--spec", edit_spec_path, "EditSpec JSON file");
  edit->add_option("--checkpoint", edit_ckpt, "model checkpoint");
  edit->add_option("--out", edit_out, "output PNG")->required();
  edit->add_option("--kind", edit_kind, "appearance, shape, add or variation");
  edit->add_option("--scene", edit_scene, "target scene JSON");
  edit->add_option("--target", edit_target, "target object id");
  edit->add_option("--a0", edit_a0);
  edit->add_option("--a1", edit_a1);
  edit->add_option("--lambda", edit_lambda, "interpolation weight");
  edit->add_option("--new-mask", edit_new_mask, "new mask PNG (shape/add)");
  edit->add_option("--category", edit_category, "category name or id (add)");
  edit->add_option("--ref-scene", edit_ref_scene, "reference scene JSON");
  edit->add_option("--ref-object", edit_ref_object, "reference object id");
  edit->add_option("--mask", edit_region, "region mask PNG restricting sampling");
  edit->add_option("--prompt", edit_prompt, "caption override");
  edit_g.add(edit);
  edit_s.add(edit);
  edit->add_flag("--json", as_json, "machine-readable output");

  // invert
  auto* inv = app.add_subcommand("invert", "DDIM-invert a scene image");
  std::string inv_ckpt, inv_scene, inv_out, inv_recon;
  Guidance inv_g;
  SamplerFlags inv_s;
  inv->add_option("--checkpoint", inv_ckpt, "model checkpoint");
  inv->add_option("--scene", inv_scene, "scene JSON")->required();
  inv->add_option("--out", inv_out, "output latent JSON");
  inv->add_option("--reconstruct", inv_recon, "sample back from the inverted latent into this PNG");
  inv_g.add(inv);
  inv_s.add(inv);
  inv->add_flag("--json", as_json, "machine-readable output");

  // eval
  auto* ev = app.add_subcommand("eval", "appearance-edit benchmark");
  std::string ev_data, ev_ckpt, ev_out, ev_backend = "desk";
  int ev_pairs = 20, ev_split = 2;
  std::uint64_t ev_seed = 0;
  bool ev_no_baselines = false;
  Guidance ev_g;
  SamplerFlags ev_s;
  ev->add_option("--dataset", ev_data, "dataset directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  ev->add_option("--pairs", ev_pairs, "number of edit pairs")->capture_default_str();
  ev->add_option("--seed", ev_seed, "benchmark seed")->capture_default_str();
  ev->add_option("--split", ev_split, "dataset split (0 train, 1 val, 2 test)")->capture_default_str();
  ev->add_option("--backend", ev_backend, "embedding backend (desk or identity)")->capture_default_str();
  ev->add_option("--out", ev_out, "CSV report path")->required();
  ev->add_flag("--no-baselines", ev_no_baselines, "only run the method and copy-paste");
  ev_g.add(ev);
  ev_s.add(ev, false);
  ev->add_flag("--json", as_json, "machine-readable output");

  // serve
  auto* srv = app.add_subcommand("serve", "run the HTTP service");
  std::string srv_config, srv_ckpt, srv_host, srv_data;
  std::optional<int> srv_port, srv_workers, srv_depth;
  std::vector<std::string> srv_oracle;
  srv->add_option("--config", srv_config, "service config JSON (PAIR_CONFIG overrides)");
  srv->add_option("--checkpoint", srv_ckpt);
  srv->add_option("--host", srv_host);
  srv->add_option("--port", srv_port);
  srv->add_option("--data-dir", srv_data);
  srv->add_option("--workers", srv_workers);
  srv->add_option("--queue-depth", srv_depth);
  srv->add_option("--oracle-dataset", srv_oracle, "dataset whose ground truth backs the oracle segmenter");

  // inspect
  auto* insp = app.add_subcommand("inspect", "summarize a scene JSON");
  std::string insp_scene;
  insp->add_option("scene", insp_scene, "scene JSON")->required();
  insp->add_flag("--json", as_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_data_gen(gen_n, gen_seed, gen_out, gen_cfg, as_json);

    if (*train) {
      json cj = train_config.empty() ? json::object() : load_json_file(train_config);
      if (train_data.empty()) train_data = cj.value("data", std::string{});
      if (train_out.empty()) train_out = cj.value("out", std::string{});
      if (train_data.empty() || train_out.empty()) throw InvalidArgument("--data and --out are required");
      TrainingConfig cfg = TrainingConfig::from_json(cj);
      if (train_steps) cfg.steps = *train_steps;
      if (train_batch) cfg.batch_size = *train_batch;
      if (train_lr) cfg.learning_rate = *train_lr;
      if (train_seed) cfg.seed = *train_seed;
      if (!train_variant.empty()) cfg.model.variant = denoiser_variant_from_string(train_variant);
      if (!train_codec.empty()) cfg.codec = {{"type", train_codec}};
      const int ae_steps = train_ae_steps.value_or(cj.value("ae_steps", 600));
      cfg.validate();
      const auto manifest = load_manifest(train_data);
      const auto t0 = std::chrono::steady_clock::now();

      std::optional<Trainer> tr;
      if (!train_resume.empty()) {
        tr.emplace(Trainer::resume(train_resume));
      } else {
        std::shared_ptr<LatentCodec> codec;
        if (cfg.codec.value("type", std::string("identity")) == "autoencoder") {
          auto ae = std::make_shared<AutoencoderCodec>(cfg.codec.value("latent_channels", 4),
                                                       cfg.codec.value("width", 32));
          std::vector<torch::Tensor> imgs;
          for (int i : manifest.split(0)) imgs.push_back(image_to_tensor(load_sample(manifest, i).image));
          if (imgs.empty()) throw InvalidArgument("training split is empty");
          torch::manual_seed(cfg.seed);
          const auto l = train_autoencoder(*ae, torch::cat(imgs), ae_steps, 32, 1e-3, derive_seed(cfg.seed, 7));
          if (!as_json) std::cerr << "autoencoder trained, final loss " << l.back() << "\n";
          cfg.model.latent_channels = ae->latent_channels();
          cfg.model.resolution = manifest.generator.height / 2;
          codec = ae;
        } else {
          cfg.model.latent_channels = 3;
          cfg.model.resolution = manifest.generator.height;
        }
        tr.emplace(cfg, codec);
      }
      const EncoderBank bank(tr->model().appearance);
      const auto pool = prepare_examples(manifest, manifest.split(0), tr->model(), bank);
      if (pool.empty()) throw InvalidArgument("training split is empty");
      const int remaining = std::max(0, tr->config().steps - tr->step());
      double ema = 0, first = 0, last = 0;
      tr->run(pool, remaining, [&](int step, double loss) {
        ema = step == 1 || ema == 0 ? loss : 0.98 * ema + 0.02 * loss;
        if (first == 0) first = loss;
        last = loss;
        if (!as_json && log_every > 0 && step % log_every == 0) {
          std::cerr << "step " << step << " loss " << loss << " avg " << ema << "\n";
        }
      });
      tr->save(train_out);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      emit(as_json,
           {{"checkpoint", train_out}, {"step", tr->step()}, {"first_loss", first}, {"last_loss", last},
            {"avg_loss", ema}, {"seconds", secs}},
           "saved " + train_out + " at step " + std::to_string(tr->step()));
      return 0;
    }

    if (*samp) {
      const auto model = load_checkpoint(require_checkpoint(samp_ckpt));
      const EncoderBank bank(model.appearance);
      const int r = model.config().resolution;
      ConditioningBundle bundle;
      std::optional<LoadedScene> scene;
      if (!samp_scene.empty()) {
        scene = load_scene_with_image(samp_scene, bank);
        bundle = assemble_conditioning(scene->scene, model.appearance, r, r);
      }
      if (samp_prompt) bundle.text = *samp_prompt;
      std::optional<Mask> region;
      std::optional<Image> original;
      if (!samp_mask.empty()) {
        if (!scene) throw InvalidArgument("--mask requires --scene");
        region = mask_png_read(samp_mask);
        original = scene->image;
      }
      const auto cfg = samp_s.apply(SamplerConfig{});
      const auto img = sample(model, bundle, samp_g.apply(GuidanceWeights{}), cfg, region, original);
      write_file_bytes(samp_out, result_png(img));
      emit(as_json, {{"out", samp_out}, {"std", image_std(img)}, {"seed", cfg.seed}}, "wrote " + samp_out);
      return 0;
    }

    if (*edit) {
      const auto model = load_checkpoint(require_checkpoint(edit_ckpt));
      const EncoderBank bank(model.appearance);
      EditSpec spec;
      fs::path base;
      if (!edit_spec_path.empty()) {
        spec = edit_spec_from_json(load_json_file(edit_spec_path));
        base = fs::path(edit_spec_path).parent_path();
      } else if (edit_kind.empty()) {
        throw InvalidArgument("either --spec or --kind is required");
      }
      if (!edit_kind.empty()) spec.kind = edit_kind_from_string(edit_kind);
      if (!edit_scene.empty()) spec.scene = edit_scene;
      if (edit_target) spec.target = *edit_target;
      if (edit_a0) spec.a0 = *edit_a0;
      if (edit_a1) spec.a1 = *edit_a1;
      if (edit_lambda) spec.lambda = *edit_lambda;
      if (!edit_new_mask.empty()) spec.new_mask = mask_png_read(edit_new_mask);
      if (!edit_category.empty()) spec.category = parse_category(edit_category);
      if (!edit_ref_scene.empty() || edit_ref_object) {
        ObjectRef ref = spec.ref.value_or(ObjectRef{});
        if (!edit_ref_scene.empty()) ref.scene = edit_ref_scene;
        if (edit_ref_object) ref.object = *edit_ref_object;
        spec.ref = ref;
      }
      if (!edit_region.empty()) spec.region_mask = mask_png_read(edit_region);
      if (edit_prompt) spec.prompt = *edit_prompt;
      spec.guidance = edit_g.apply(spec.guidance);
      if (edit_s.steps) spec.sampler.steps = *edit_s.steps;
      if (edit_s.eta) spec.sampler.eta = *edit_s.eta;
      if (edit_s.combiner) spec.sampler.combiner = combiner_from_string(*edit_s.combiner);
      if (edit_s.seed) spec.seed = *edit_s.seed;
      validate_edit_spec(spec);

      CliScenes scenes(bank, base);
      const LoadedScene& target = scenes.get(spec.scene);
      const auto out = execute_edit(model, target, spec,
                                    [&](const std::string& ref) { return scenes.get(ref).scene; });
      const auto png = result_png(out.image);
      write_file_bytes(edit_out, png);
      emit(as_json,
           {{"out", edit_out},
            {"kind", to_string(spec.kind)},
            {"seed", spec.seed},
            {"region_area", mask_area(out.edit.region)},
            {"locality_l1", mask_area(out.edit.region) < out.edit.region.size()
                                ? json(l1_locality(target.image, out.image, out.edit.region))
                                : json(nullptr)},
            {"hints", guidance_hints(spec.guidance)}},
           "wrote " + edit_out);
      return 0;
    }

    if (*inv) {
      const auto model = load_checkpoint(require_checkpoint(inv_ckpt));
      const EncoderBank bank(model.appearance);
      const auto scene = load_scene_with_image(inv_scene, bank);
      const int r = model.config().resolution;
      const auto bundle = assemble_conditioning(scene.scene, model.appearance, r, r);
      SamplerConfig cfg = inv_s.apply(SamplerConfig{});
      if (!inv_s.steps) cfg.steps = 50;
      const GuidanceWeights w = inv_g.apply(GuidanceWeights{1.0, 1.0, 0.0});
      const auto z0 = model.codec->encode(image_to_tensor(scene.image));
      const auto zT = ddim_invert(model, z0, bundle, w, cfg);
      json j{{"steps", cfg.steps}, {"shape", zT.sizes().vec()}};
      if (!inv_out.empty()) {
        auto flat = zT.contiguous();
        std::vector<float> vals(flat.data_ptr<float>(), flat.data_ptr<float>() + flat.numel());
        std::ofstream(inv_out) << json{{"shape", zT.sizes().vec()}, {"values", vals}}.dump();
        j["out"] = inv_out;
      }
      if (!inv_recon.empty()) {
        SamplerConfig rec_cfg = cfg;
        rec_cfg.clip_denoised = false;
        const auto z = sample_latent(model, bundle, w, rec_cfg, std::nullopt, std::nullopt, zT);
        const Image rec = tensor_to_image(model.codec->decode(z));
        write_file_bytes(inv_recon, result_png(rec));
        j["reconstruct"] = inv_recon;
        j["reconstruction_l1"] = l1_locality(scene.image, rec, Mask(rec.height(), rec.width(), 0));
      }
      emit(as_json, j, "inverted " + inv_scene + " in " + std::to_string(cfg.steps) + " steps");
      return 0;
    }

    if (*ev) {
      const auto model = load_checkpoint(require_checkpoint(ev_ckpt));
      BenchmarkConfig cfg;
      cfg.pairs = ev_pairs;
      cfg.seed = ev_seed;
      cfg.split = ev_split;
      cfg.backend = ev_backend;
      cfg.baselines = !ev_no_baselines;
      cfg.sampler = ev_s.apply(cfg.sampler);
      cfg.guidance = ev_g.apply(cfg.guidance);
      const auto reports = run_appearance_benchmark(model, load_manifest(ev_data), cfg);
      const std::string csv = report_csv(reports);
      write_file_bytes(ev_out, std::vector<std::uint8_t>(csv.begin(), csv.end()));
      emit(as_json, report_json(reports, cfg), csv);
      return 0;
    }

    if (*srv) {
      ServiceConfig cfg = load_service_config(srv_config.empty() ? std::nullopt : std::optional<fs::path>(srv_config));
      if (!srv_ckpt.empty()) cfg.checkpoint = srv_ckpt;
      if (!srv_host.empty()) cfg.host = srv_host;
      if (srv_port) cfg.port = *srv_port;
      if (!srv_data.empty()) cfg.data_dir = srv_data;
      if (srv_workers) cfg.workers = *srv_workers;
      if (srv_depth) cfg.queue_depth = *srv_depth;
      for (const auto& d : srv_oracle) cfg.oracle_datasets.push_back(d);
      cfg.validate();
      if (cfg.checkpoint.empty()) throw InvalidArgument("the service needs a checkpoint");
      Service service(cfg, load_checkpoint(cfg.checkpoint), checkpoint_fingerprint(cfg.checkpoint));
      if (cfg.port == 0) {
        const int port = service.start();
        std::cout << "listening on " << cfg.host << ":" << port << std::endl;
        std::promise<void>().get_future().wait();
      }
      std::cout << "listening on " << cfg.host << ":" << cfg.port << std::endl;
      service.run();
      return 0;
    }

    if (*insp) {
      const auto scene = load_scene(insp_scene);
      json objs = json::array();
      std::ostringstream text;
      text << insp_scene << ": " << scene.width << "x" << scene.height << ", " << scene.num_objects()
           << " objects, caption " << (scene.caption ? "\"" + *scene.caption + "\"" : std::string("(none)")) << "\n";
      for (int i = 0; i < scene.num_objects(); ++i) {
        const auto& o = scene.objects[static_cast<std::size_t>(i)];
        const Box b = mask_bbox(o.structure.mask);
        const std::string cat = o.structure.category < static_cast<int>(scene.categories.size())
                                    ? scene.categories[static_cast<std::size_t>(o.structure.category)]
                                    : std::to_string(o.structure.category);
        json layers = json::array();
        for (const auto& l : o.appearance.layers) {
          layers.push_back({{"encoder", l.encoder_id}, {"layer", l.layer}, {"channels", l.values.size()}});
        }
        objs.push_back({{"id", i},
                        {"category", cat},
                        {"area", mask_area(o.structure.mask)},
                        {"bbox", {b.top, b.left, b.bottom, b.right}},
                        {"appearance", layers}});
        text << "  [" << i << "] " << cat << " area " << mask_area(o.structure.mask) << " bbox (" << b.top << ","
             << b.left << ")-(" << b.bottom << "," << b.right << ") appearance layers " << layers.size() << "\n";
      }
      emit(as_json,
           {{"scene", insp_scene},
            {"height", scene.height},
            {"width", scene.width},
            {"caption", scene.caption ? json(*scene.caption) : json(nullptr)},
            {"objects", objs}},
           text.str());
      return 0;
    }
  } catch (const pairdiff::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
