#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdp/denoiser.hpp"
#include "tdp/metrics.hpp"
#include "tdp/policy.hpp"
#include "tdp/schedule.hpp"
#include "tdp/world.hpp"

namespace tdp {

struct ScheduleConfig {
  int total_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double trunc_fraction = 0.05;
};

struct AnchorConfig {
  int k = 16;
  int restarts = 10;
  int max_iters = 100;
  std::uint64_t seed = 7;
};

struct DataConfig {
  int train_scenes = 500;
  int eval_scenes = 100;
  int horizon = 8;
  double dt = 0.5;
  std::uint64_t seed = 42;
  std::vector<std::string> kinds = {"fork", "obstacle", "merge"};
};

struct BenchConfig {
  int scenes = 50;
};

struct PathsConfig {
  std::string corpus = "corpus.jsonl";
  std::string model = "model_trunc.bin";
  std::string vanilla_model = "model_vanilla.bin";
  std::string report = "report.json";
  std::string plot = "plot.svg";
};

/// Every tunable of the pipeline, grouped by module. Defaults here are the
/// working defaults of the whole artifact.
struct RunConfig {
  ScheduleConfig schedule;
  AnchorConfig anchors;
  CascadeConfig cascade;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;
  BenchConfig bench;
  PathsConfig paths;
};

NoiseSchedule build_schedule(const ScheduleConfig& cfg);

/// The full corpus for one config: train_scenes + eval_scenes scenes, kind
/// rotating through cfg.kinds, scene i seeded derive_seed(cfg.seed, i).
std::vector<Scene> generate_corpus(const DataConfig& cfg);

nlohmann::json config_to_json(const RunConfig& cfg);
/// Rejects unknown keys at every nesting level and validates ranges.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

/// JSON-lines corpus, one scene per line, in order.
void save_scenes(const std::vector<Scene>& scenes, const std::string& path);
std::vector<Scene> load_scenes(const std::string& path);

/// On-disk trained model: parameters + anchors + the schedule it was trained
/// under, in one little-endian binary container.
struct ModelFile {
  TrainedPolicy policy;
  ScheduleConfig schedule;
};

void save_model(const ModelFile& model, const std::string& path);
ModelFile load_model(const std::string& path);

nlohmann::json report_to_json(const EvalReport& report);

}  // namespace tdp
