#include "pairdiff/service.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "pairdiff/error.hpp"
#include "pairdiff/pipeline.hpp"
#include "pairdiff/png_io.hpp"
#include "pairdiff/scene.hpp"

namespace pairdiff {

namespace fs = std::filesystem;

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw InvalidArgument("port out of range");
  if (queue_depth < 1) throw InvalidArgument("queue_depth must be at least 1");
  if (workers < 1) throw InvalidArgument("workers must be at least 1");
  if (data_dir.empty()) throw InvalidArgument("data_dir must be set");
}

nlohmann::json ServiceConfig::to_json() const {
  return {{"checkpoint", checkpoint},   {"host", host},
          {"port", port},               {"queue_depth", queue_depth},
          {"workers", workers},         {"data_dir", data_dir},
          {"oracle_datasets", oracle_datasets}, {"segmenter_command", segmenter_command}};
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  ServiceConfig c;
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.queue_depth = j.value("queue_depth", c.queue_depth);
  c.workers = j.value("workers", c.workers);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.oracle_datasets = j.value("oracle_datasets", c.oracle_datasets);
  c.segmenter_command = j.value("segmenter_command", c.segmenter_command);
  c.validate();
  return c;
}

std::optional<fs::path> config_path_from_env(const std::optional<fs::path>& path) {
  if (const char* env = std::getenv("PAIR_CONFIG"); env && *env) return fs::path(env);
  return path;
}

ServiceConfig load_service_config(const std::optional<fs::path>& path) {
  const auto p = config_path_from_env(path);
  if (!p) return ServiceConfig{};
  std::ifstream in(*p);
  if (!in) throw NotFound("config file not found: " + p->string());
  try {
    return ServiceConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed config " + p->string() + ": " + e.what());
  }
}

std::string to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

JobState job_state_from_string(const std::string& s) {
  if (s == "queued") return JobState::queued;
  if (s == "running") return JobState::running;
  if (s == "done") return JobState::done;
  if (s == "failed") return JobState::failed;
  throw InvalidArgument("unknown job state: " + s);
}

nlohmann::json Job::to_json() const {
  return {{"id", id},
          {"state", to_string(state)},
          {"spec", spec},
          {"progress", {{"completed", completed}, {"total", total}}},
          {"result", result.empty() ? nlohmann::json(nullptr) : nlohmann::json(result)},
          {"error", error.empty() ? nlohmann::json(nullptr) : nlohmann::json(error)},
          {"created_ms", created_ms},
          {"started_ms", started_ms},
          {"finished_ms", finished_ms}};
}

Job Job::from_json(const nlohmann::json& j) {
  Job job;
  job.id = j.at("id").get<std::string>();
  job.state = job_state_from_string(j.at("state").get<std::string>());
  job.spec = j.at("spec");
  job.completed = j.at("progress").value("completed", 0);
  job.total = j.at("progress").value("total", 0);
  if (j.contains("result") && j.at("result").is_string()) job.result = j.at("result").get<std::string>();
  if (j.contains("error") && j.at("error").is_string()) job.error = j.at("error").get<std::string>();
  job.created_ms = j.value("created_ms", std::int64_t{0});
  job.started_ms = j.value("started_ms", std::int64_t{0});
  job.finished_ms = j.value("finished_ms", std::int64_t{0});
  return job;
}

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string make_uuid() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}() ^ static_cast<std::uint64_t>(now_ms())};
  std::uint64_t hi, lo;
  {
    std::lock_guard<std::mutex> lock(m);
    hi = gen();
    lo = gen();
  }
  hi = (hi & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
  lo = (lo & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(8) << (hi >> 32) << '-' << std::setw(4) << ((hi >> 16) & 0xffff)
     << '-' << std::setw(4) << (hi & 0xffff) << '-' << std::setw(4) << (lo >> 48) << '-' << std::setw(12)
     << (lo & 0xffffffffffffULL);
  return os.str();
}

std::string content_hash(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << h;
  return os.str();
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-') return false;
  }
  return true;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}, {"status", status}});
}

}  // namespace

struct Service::Impl {
  ServiceConfig cfg;
  DiffusionModel model;
  std::string fingerprint;
  EncoderBank bank;
  SegmenterRegistry segmenters;
  httplib::Server server;
  std::thread server_thread;

  std::mutex mutex;
  std::condition_variable cv;
  std::map<std::string, Image> images;
  std::map<std::string, SceneDescription> scenes;
  std::map<std::string, Job> jobs;
  std::deque<std::string> queue;
  int running = 0;
  bool stopping = false;
  std::vector<std::thread> workers;
  std::ofstream journal;

  Impl(ServiceConfig c, DiffusionModel m, std::string fp)
      : cfg(std::move(c)), model(std::move(m)), fingerprint(std::move(fp)), bank(model.appearance) {
    cfg.validate();
    const fs::path root(cfg.data_dir);
    fs::create_directories(root / "images");
    fs::create_directories(root / "scenes");
    fs::create_directories(root / "results");
    for (const auto& d : cfg.oracle_datasets) segmenters.oracle().add_dataset(d);
    if (!cfg.segmenter_command.empty()) segmenters.add(std::make_shared<ExternalSegmenter>(cfg.segmenter_command));
    restore();
    journal.open(root / "journal.jsonl", std::ios::app);
    routes();
  }

  fs::path root() const { return cfg.data_dir; }

  void restore() {
    for (const auto& e : fs::directory_iterator(root() / "images")) {
      if (e.path().extension() == ".png") images[e.path().stem().string()] = png_read(e.path());
    }
    for (const auto& e : fs::directory_iterator(root() / "scenes")) {
      if (e.path().extension() == ".json") scenes[e.path().stem().string()] = load_scene(e.path());
    }
    std::ifstream in(root() / "journal.jsonl");
    std::string line;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        Job j = Job::from_json(nlohmann::json::parse(line));
        if (!jobs.count(j.id)) order.push_back(j.id);
        jobs[j.id] = j;
      } catch (const std::exception&) {
        // A torn final line from a crash is skipped.
      }
    }
    std::vector<Job*> interrupted;
    for (const auto& id : order) {
      Job& j = jobs[id];
      if (j.state == JobState::queued) queue.push_back(id);
      if (j.state == JobState::running) interrupted.push_back(&j);
    }
    std::ofstream out(root() / "journal.jsonl", std::ios::app);
    for (Job* j : interrupted) {
      j->state = JobState::failed;
      j->error = "interrupted by service restart";
      j->finished_ms = now_ms();
      out << j->to_json().dump() << '\n';
    }
  }

  void record(const Job& j) {
    journal << j.to_json().dump() << '\n';
    journal.flush();
  }

  nlohmann::json scene_response(const std::string& id, const SceneDescription& s) {
    auto j = scene_to_json(s);
    j["scene_id"] = id;
    return j;
  }

  SceneDescription resolve(const std::string& id) {
    std::lock_guard<std::mutex> lock(mutex);
    const auto it = scenes.find(id);
    if (it == scenes.end()) throw NotFound("unknown scene: " + id);
    return it->second;
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.set_payload_max_length(16 * 1024 * 1024);
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mutex);
      send_json(res, 200,
                {{"status", "ok"},
                 {"checkpoint", fingerprint},
                 {"queued", queue.size()},
                 {"running", running},
                 {"resolution", model.image_resolution()}});
    });

    server.Post("/api/images", [this](const httplib::Request& req, httplib::Response& res) {
      Image img;
      try {
        img = png_decode(std::vector<std::uint8_t>(req.body.begin(), req.body.end()));
        validate_image(img);
      } catch (const Error& e) {
        return send_error(res, 400, std::string("invalid PNG: ") + e.what());
      }
      const std::string id = make_uuid();
      png_write(img, root() / "images" / (id + ".png"));
      {
        std::lock_guard<std::mutex> lock(mutex);
        images[id] = img;
      }
      send_json(res, 201, {{"image_id", id}, {"height", img.height()}, {"width", img.width()}});
    });

    server.Post(R"(/api/images/([^/]+)/segment)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      Image img;
      {
        std::lock_guard<std::mutex> lock(mutex);
        const auto it = images.find(id);
        if (it == images.end()) return send_error(res, 404, "unknown image: " + id);
        img = it->second;
      }
      std::string backend = "oracle";
      if (!req.body.empty()) {
        try {
          backend = nlohmann::json::parse(req.body).value("backend", backend);
        } catch (const nlohmann::json::exception& e) {
          return send_error(res, 422, std::string("malformed segment request: ") + e.what());
        }
      }
      SceneDescription scene;
      try {
        scene = build_scene(img, segmenters.segment(img, backend), bank);
      } catch (const NotFound& e) {
        return send_error(res, segmenters.contains(backend) ? 422 : 404, e.what());
      } catch (const Error& e) {
        return send_error(res, 422, e.what());
      }
      scene.image_path = "images/" + id + ".png";
      save_scene(scene, root() / "scenes" / (id + ".json"));
      {
        std::lock_guard<std::mutex> lock(mutex);
        scenes[id] = scene;
      }
      send_json(res, 200, scene_response(id, scene));
    });

    server.Get(R"(/api/scenes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      std::lock_guard<std::mutex> lock(mutex);
      const auto it = scenes.find(id);
      if (it == scenes.end()) return send_error(res, 404, "unknown scene: " + id);
      send_json(res, 200, scene_response(id, it->second));
    });

    server.Post("/api/edits", [this](const httplib::Request& req, httplib::Response& res) { submit(req, res); });

    server.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mutex);
      const auto it = jobs.find(req.matches[1]);
      if (it == jobs.end()) return send_error(res, 404, "unknown job: " + std::string(req.matches[1]));
      send_json(res, 200, it->second.to_json());
    });

    server.Get(R"(/api/results/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const fs::path p = root() / "results" / (id + ".png");
      if (!safe_id(id) || !fs::exists(p)) return send_error(res, 404, "unknown result: " + id);
      const auto bytes = read_file_bytes(p);
      res.status = 200;
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    });
  }

  void submit(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    EditSpec spec;
    try {
      body = nlohmann::json::parse(req.body);
      spec = edit_spec_from_json(body);
      validate_edit_spec(spec);
    } catch (const nlohmann::json::exception& e) {
      return send_error(res, 422, std::string("malformed EditSpec: ") + e.what());
    } catch (const Error& e) {
      return send_error(res, 422, e.what());
    }
    try {
      const SceneDescription scene = resolve(spec.scene);
      if (spec.ref && !spec.ref->scene.empty()) (void)resolve(spec.ref->scene);
      if (scene.height != model.image_resolution() || scene.width != model.image_resolution()) {
        return send_error(res, 422, "scene size does not match the model resolution");
      }
      (void)apply_edit(scene, spec, [this](const std::string& id) { return resolve(id); });
    } catch (const NotFound& e) {
      return send_error(res, 404, e.what());
    } catch (const PartitionViolation& e) {
      return send_error(res, 409, e.what());
    } catch (const Error& e) {
      return send_error(res, 422, e.what());
    }
    std::lock_guard<std::mutex> lock(mutex);
    if (static_cast<int>(queue.size()) >= cfg.queue_depth) return send_error(res, 503, "edit queue is full");
    Job job;
    job.id = make_uuid();
    job.spec = edit_spec_to_json(spec);
    job.total = sampler_config(spec).steps;
    job.created_ms = now_ms();
    jobs[job.id] = job;
    record(job);
    queue.push_back(job.id);
    cv.notify_all();
    send_json(res, 202, {{"job_id", job.id}});
  }

  void work() {
    for (;;) {
      std::string id;
      {
        std::unique_lock<std::mutex> lock(mutex);
        cv.wait(lock, [this] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        Job& j = jobs[id];
        j.state = JobState::running;
        j.started_ms = now_ms();
        ++running;
        record(j);
      }
      std::string result, error;
      try {
        const EditSpec spec = edit_spec_from_json(jobs_spec(id));
        LoadedScene target;
        target.scene = resolve(spec.scene);
        {
          std::lock_guard<std::mutex> lock(mutex);
          const auto it = images.find(spec.scene);
          if (it == images.end()) throw NotFound("image of scene " + spec.scene + " is missing");
          target.image = it->second;
        }
        const auto out = execute_edit(model, target, spec, [this](const std::string& s) { return resolve(s); },
                                      [this, &id](int done, int total) {
                                        std::lock_guard<std::mutex> lock(mutex);
                                        Job& j = jobs[id];
                                        j.completed = std::max(j.completed, done);
                                        j.total = total;
                                      });
        const auto png = result_png(out.image);
        result = content_hash(png);
        const fs::path p = root() / "results" / (result + ".png");
        if (!fs::exists(p)) write_file_bytes(p, png);
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard<std::mutex> lock(mutex);
      Job& j = jobs[id];
      j.finished_ms = now_ms();
      if (error.empty()) {
        j.state = JobState::done;
        j.result = result;
        j.completed = j.total;
      } else {
        j.state = JobState::failed;
        j.error = error;
      }
      record(j);
      --running;
      cv.notify_all();
    }
  }

  nlohmann::json jobs_spec(const std::string& id) {
    std::lock_guard<std::mutex> lock(mutex);
    return jobs.at(id).spec;
  }

  void start_workers() {
    if (!workers.empty()) return;
    for (int i = 0; i < cfg.workers; ++i) workers.emplace_back([this] { work(); });
  }

  void stop() {
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    {
      std::lock_guard<std::mutex> lock(mutex);
      stopping = true;
    }
    cv.notify_all();
    for (auto& w : workers) {
      if (w.joinable()) w.join();
    }
    workers.clear();
  }
};

Service::Service(ServiceConfig cfg, DiffusionModel model, std::string checkpoint_fingerprint)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(model), std::move(checkpoint_fingerprint))) {}

Service::~Service() { impl_->stop(); }

SegmenterRegistry& Service::segmenters() { return impl_->segmenters; }

int Service::start() {
  int port = impl_->cfg.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->cfg.host);
    if (port < 0) throw Error("cannot bind to " + impl_->cfg.host);
  } else if (!impl_->server.bind_to_port(impl_->cfg.host, port)) {
    throw Error("cannot bind to " + impl_->cfg.host + ":" + std::to_string(port));
  }
  impl_->start_workers();
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::run() {
  impl_->start_workers();
  if (!impl_->server.listen(impl_->cfg.host, impl_->cfg.port)) {
    throw Error("cannot listen on " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
  }
}

void Service::stop() { impl_->stop(); }

void Service::wait_idle() {
  std::unique_lock<std::mutex> lock(impl_->mutex);
  impl_->cv.wait(lock, [this] { return impl_->queue.empty() && impl_->running == 0; });
}

}  // namespace pairdiff
