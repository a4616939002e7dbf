#include "torch_doctest.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "model_helpers.hpp"
#include "pairdiff/error.hpp"
#include "pairdiff/pipeline.hpp"
#include "pairdiff/png_io.hpp"
#include "pairdiff/service.hpp"

using namespace pairdiff;
using namespace testutil;
using nlohmann::json;

namespace {

struct Dataset {
  std::filesystem::path dir = temp_dir("service_ds");
  DatasetManifest manifest = generate_dataset(small_generator(), 6, 21, dir);
};

const Dataset& dataset() {
  static const Dataset d;
  return d;
}

struct Running {
  std::unique_ptr<Service> service;
  int port = 0;
  std::unique_ptr<httplib::Client> http;
  httplib::Client& client;

  Running(const std::filesystem::path& data, int queue_depth = 16) : client(connect(data, queue_depth)) {}

  httplib::Client& connect(const std::filesystem::path& data, int queue_depth) {
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.data_dir = data.string();
    cfg.queue_depth = queue_depth;
    cfg.oracle_datasets = {dataset().dir.string()};
    service = std::make_unique<Service>(cfg, tiny_model16(3), "test-fingerprint");
    port = service->start();
    http = std::make_unique<httplib::Client>("127.0.0.1", port);
    http->set_read_timeout(60, 0);
    return *http;
  }
};

std::string png_body(int index) {
  const auto bytes = png_encode(load_sample(dataset().manifest, index).image);
  return {bytes.begin(), bytes.end()};
}

// Uploads and segments sample `index`; returns the scene id.
std::string add_scene(httplib::Client& c, int index) {
  const auto up = c.Post("/api/images", png_body(index), "image/png");
  REQUIRE(up);
  REQUIRE(up->status == 201);
  const std::string id = json::parse(up->body)["image_id"];
  const auto seg = c.Post("/api/images/" + id + "/segment", "", "application/json");
  REQUIRE(seg);
  REQUIRE(seg->status == 200);
  return id;
}

int foreground(const json& scene) {
  const auto& objs = scene["objects"];
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (objs[i]["category"] != 0) return static_cast<int>(i);
  }
  return -1;
}

json appearance_spec(const std::string& scene, int target, const std::string& ref, int steps = 3) {
  EditSpec spec;
  spec.kind = EditKind::appearance;
  spec.scene = scene;
  spec.target = target;
  spec.ref = ObjectRef{ref, 1};
  spec.a0 = 0;
  spec.a1 = 1;
  spec.seed = 17;
  spec.sampler.steps = steps;
  return edit_spec_to_json(spec);
}

json wait_job(httplib::Client& c, const std::string& id) {
  for (int i = 0; i < 600; ++i) {
    const auto r = c.Get("/api/jobs/" + id);
    REQUIRE(r);
    REQUIRE(r->status == 200);
    const auto j = json::parse(r->body);
    if (j["state"] == "done" || j["state"] == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_CASE("health and CORS") {
  Running s(temp_dir("service_health"));
  const auto r = s.client.Get("/api/health");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto j = json::parse(r->body);
  CHECK(j["status"] == "ok");
  CHECK(j["checkpoint"] == "test-fingerprint");
  CHECK(j["resolution"] == 16);
  CHECK(r->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto o = s.client.Options("/api/edits");
  REQUIRE(o);
  CHECK(o->status == 204);
}

TEST_CASE("image upload and segmentation") {
  Running s(temp_dir("service_images"));
  const auto bad = s.client.Post("/api/images", "not a png", "image/png");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  const auto up = s.client.Post("/api/images", png_body(0), "image/png");
  REQUIRE(up);
  CHECK(up->status == 201);
  const std::string id = json::parse(up->body)["image_id"];
  CHECK(std::regex_match(id, std::regex("[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}")));

  CHECK(s.client.Post("/api/images/nope/segment", "", "application/json")->status == 404);
  CHECK(s.client.Post("/api/images/" + id + "/segment", R"({"backend":"sam"})", "application/json")->status == 422);
  CHECK(s.client.Post("/api/images/" + id + "/segment", "{", "application/json")->status == 422);
  CHECK(s.client.Get("/api/scenes/" + id)->status == 404);

  const auto seg = s.client.Post("/api/images/" + id + "/segment", "", "application/json");
  REQUIRE(seg);
  CHECK(seg->status == 200);
  const auto scene = json::parse(seg->body);
  CHECK(scene["scene_id"] == id);
  const auto sample = load_sample(dataset().manifest, 0);
  CHECK(scene["objects"].size() == sample.objects.size());
  const auto got = s.client.Get("/api/scenes/" + id);
  REQUIRE(got);
  CHECK(got->status == 200);
  CHECK(json::parse(got->body) == scene);

  // Unregistered, non-uniform content has no oracle truth.
  Rng rng(1);
  const auto noise = png_encode(random_image(rng, 16, 16));
  const auto up2 = s.client.Post("/api/images", std::string(noise.begin(), noise.end()), "image/png");
  const std::string id2 = json::parse(up2->body)["image_id"];
  CHECK(s.client.Post("/api/images/" + id2 + "/segment", "", "application/json")->status == 422);
}

TEST_CASE("edit submission errors") {
  Running s(temp_dir("service_edit_errors"));
  const std::string a = add_scene(s.client, 0);
  const auto post = [&](const std::string& body) { return s.client.Post("/api/edits", body, "application/json"); };
  CHECK(post("{")->status == 422);
  CHECK(post(R"({"kind":"rotate"})")->status == 422);
  CHECK(post(json{{"kind", "appearance"}, {"scene", a}, {"target", 1}}.dump())->status == 422);
  CHECK(post(appearance_spec("missing", 1, a).dump())->status == 404);
  CHECK(post(appearance_spec(a, 1, "missing").dump())->status == 404);
  CHECK(post(appearance_spec(a, 40, a).dump())->status == 404);

  // Shrinking the background leaves vacated pixels with no owner.
  EditSpec shrink;
  shrink.kind = EditKind::shape;
  shrink.scene = a;
  shrink.target = 0;
  Mask m(16, 16);
  m(0, 0) = 1;
  shrink.new_mask = m;
  CHECK(post(edit_spec_to_json(shrink).dump())->status == 409);

  CHECK(s.client.Get("/api/jobs/nope")->status == 404);
  CHECK(s.client.Get("/api/results/nope")->status == 404);
  CHECK(s.client.Get("/api/results/..%2F..%2Fetc")->status == 404);
}

TEST_CASE("edit jobs run to completion and match the in-process pipeline") {
  const auto data = temp_dir("service_edits");
  Running s(data);
  const std::string a = add_scene(s.client, 0);
  const std::string b = add_scene(s.client, 1);
  const int target = foreground(json::parse(s.client.Get("/api/scenes/" + a)->body));
  REQUIRE(target >= 0);
  const json spec = appearance_spec(a, target, b);
  const auto sub = s.client.Post("/api/edits", spec.dump(), "application/json");
  REQUIRE(sub);
  CHECK(sub->status == 202);
  const std::string job_id = json::parse(sub->body)["job_id"];
  const auto job = wait_job(s.client, job_id);
  REQUIRE(job["state"] == "done");
  CHECK(job["progress"]["completed"] == 3);
  CHECK(job["progress"]["total"] == 3);
  const auto res = s.client.Get("/api/results/" + job["result"].get<std::string>());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");

  const auto model = tiny_model16(3);
  const EncoderBank bank(model.appearance);
  const auto target_scene = load_scene_with_image(data / "scenes" / (a + ".json"), bank);
  const SceneResolver resolve = [&](const std::string& id) {
    return load_scene_with_image(data / "scenes" / (id + ".json"), bank).scene;
  };
  const auto local = result_png(execute_edit(model, target_scene, edit_spec_from_json(spec), resolve).image);
  CHECK(std::string(local.begin(), local.end()) == res->body);

  // Identical submissions land on the same content-addressed result.
  const auto again = wait_job(s.client, json::parse(s.client.Post("/api/edits", spec.dump(), "application/json")->body)["job_id"]);
  CHECK(again["result"] == job["result"]);
}

TEST_CASE("a full queue answers 503") {
  Running s(temp_dir("service_queue"), 1);
  const std::string a = add_scene(s.client, 0);
  const int target = foreground(json::parse(s.client.Get("/api/scenes/" + a)->body));
  const std::string body = appearance_spec(a, target, a, 400).dump();
  std::vector<int> codes;
  for (int i = 0; i < 4; ++i) codes.push_back(s.client.Post("/api/edits", body, "application/json")->status);
  CHECK(codes[0] == 202);
  CHECK(std::count(codes.begin(), codes.end(), 503) >= 2);
  for (int c : codes) CHECK((c == 202 || c == 503));
}

TEST_CASE("journal replay after restart") {
  const auto data = temp_dir("service_restart");
  std::string a, done_job, done_result;
  int target = -1;
  {
    Running s(data);
    a = add_scene(s.client, 0);
    target = foreground(json::parse(s.client.Get("/api/scenes/" + a)->body));
    done_job = json::parse(s.client.Post("/api/edits", appearance_spec(a, target, a).dump(), "application/json")->body)["job_id"];
    done_result = wait_job(s.client, done_job)["result"];
  }
  // Simulate a crash that left one job running and one queued.
  {
    std::ofstream journal(data / "journal.jsonl", std::ios::app);
    Job running;
    running.id = "11111111-1111-4111-8111-111111111111";
    running.state = JobState::running;
    running.spec = appearance_spec(a, target, a);
    journal << running.to_json().dump() << '\n';
    Job queued;
    queued.id = "22222222-2222-4222-8222-222222222222";
    queued.spec = appearance_spec(a, target, a);
    queued.total = 3;
    journal << queued.to_json().dump() << '\n';
    journal << "{\"id\": \"torn";
  }
  Running s(data);
  const auto r = json::parse(s.client.Get("/api/jobs/11111111-1111-4111-8111-111111111111")->body);
  CHECK(r["state"] == "failed");
  CHECK(r["error"] == "interrupted by service restart");
  const auto q = wait_job(s.client, "22222222-2222-4222-8222-222222222222");
  CHECK(q["state"] == "done");
  CHECK(q["result"] == done_result);
  const auto d = json::parse(s.client.Get("/api/jobs/" + done_job)->body);
  CHECK(d["state"] == "done");
  CHECK(s.client.Get("/api/results/" + done_result)->status == 200);
  CHECK(s.client.Get("/api/scenes/" + a)->status == 200);
}

TEST_CASE("service config") {
  ServiceConfig c;
  c.port = 9000;
  c.workers = 2;
  c.oracle_datasets = {"a", "b"};
  const auto back = ServiceConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  c.queue_depth = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);

  const auto dir = temp_dir("service_config");
  std::ofstream(dir / "a.json") << json{{"port", 1234}}.dump();
  std::ofstream(dir / "b.json") << json{{"port", 4321}}.dump();
  ::unsetenv("PAIR_CONFIG");
  CHECK(load_service_config(dir / "a.json").port == 1234);
  CHECK(load_service_config(std::nullopt).port == 8080);
  ::setenv("PAIR_CONFIG", (dir / "b.json").c_str(), 1);
  CHECK(load_service_config(dir / "a.json").port == 4321);
  ::unsetenv("PAIR_CONFIG");
  CHECK_THROWS_AS(load_service_config(dir / "none.json"), NotFound);
  std::ofstream(dir / "bad.json") << "{";
  CHECK_THROWS_AS(load_service_config(dir / "bad.json"), InvalidArgument);
}

TEST_CASE("job JSON round trip") {
  Job j;
  j.id = "x";
  j.state = JobState::done;
  j.spec = json{{"kind", "variation"}};
  j.completed = 3;
  j.total = 5;
  j.result = "abc";
  j.created_ms = 7;
  const auto back = Job::from_json(j.to_json());
  CHECK(back.to_json() == j.to_json());
  CHECK_THROWS_AS(job_state_from_string("paused"), InvalidArgument);
}
