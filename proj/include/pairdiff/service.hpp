#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairdiff/diffusion.hpp"
#include "pairdiff/editops.hpp"
#include "pairdiff/panoptic.hpp"

namespace pairdiff {

struct ServiceConfig {
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  int queue_depth = 16;
  int workers = 1;
  std::string data_dir = "pair-data";
  // Dataset roots registered with the oracle segmenter at startup.
  std::vector<std::string> oracle_datasets;
  // Command for the "external" segmenter backend (optional).
  std::string segmenter_command;

  void validate() const;
  nlohmann::json to_json() const;
  static ServiceConfig from_json(const nlohmann::json& j);
};

// Config path resolution: PAIR_CONFIG wins over `path`. Returns defaults when
// neither names a file.
ServiceConfig load_service_config(const std::optional<std::filesystem::path>& path);
std::optional<std::filesystem::path> config_path_from_env(const std::optional<std::filesystem::path>& path);

enum class JobState { queued, running, done, failed };
std::string to_string(JobState s);
JobState job_state_from_string(const std::string& s);

struct Job {
  std::string id;
  JobState state = JobState::queued;
  nlohmann::json spec;
  int completed = 0;
  int total = 0;
  std::string result;  // result id once done
  std::string error;
  std::int64_t created_ms = 0;
  std::int64_t started_ms = 0;
  std::int64_t finished_ms = 0;

  nlohmann::json to_json() const;
  static Job from_json(const nlohmann::json& j);
};

// HTTP job service. Request handling is concurrent; edits run on a FIFO queue
// drained by `workers` threads. Job records are journaled to
// <data_dir>/journal.jsonl and replayed on startup.
class Service {
 public:
  Service(ServiceConfig cfg, DiffusionModel model, std::string checkpoint_fingerprint);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  SegmenterRegistry& segmenters();

  // Binds and serves on a background thread; returns the bound port (an
  // ephemeral one when the configured port is 0).
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();

  // Blocks until no job is queued or running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pairdiff
