#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdp/policy.hpp"
#include "tdp/schedule.hpp"
#include "tdp/trajectory.hpp"
#include "tdp/world.hpp"

namespace tdp {

/// Minimum over (candidate, gt mode) pairs of the average pointwise
/// Euclidean distance.
double min_ade(const std::vector<Trajectory>& candidates,
               const std::vector<Trajectory>& gt_modes);

/// Fraction of gt modes whose best-candidate ADE is strictly below the
/// threshold.
double mode_coverage(const std::vector<Trajectory>& candidates,
                     const std::vector<Trajectory>& gt_modes,
                     double threshold = 0.5);

enum class DiversityMetric { kFinalWaypoint, kFullPath };

/// Mean over unordered candidate pairs of either the final-waypoint distance
/// (default) or the full-path ADE. Zero for a single candidate.
double diversity(const std::vector<Trajectory>& candidates,
                 DiversityMetric metric = DiversityMetric::kFinalWaypoint);

struct EvalConfig {
  int trunc_steps = 2;
  int vanilla_steps = 20;
  int vanilla_samples = 16;
  double coverage_threshold = 0.5;
  DiversityMetric diversity_metric = DiversityMetric::kFinalWaypoint;
  std::uint64_t seed = 42;
};

/// Per-scene evaluation row; kept so aggregate numbers can be re-derived.
struct SceneEval {
  double pdms = 0.0;  // mini-PDMS of the selected candidate
  double min_ade = 0.0;
  double mode_coverage = 0.0;
  double diversity = 0.0;
};

struct MethodReport {
  std::string name;
  int n_denoise_steps = 0;
  double mean_pdms = 0.0;
  double mean_min_ade = 0.0;
  double mean_mode_coverage = 0.0;
  double fork_mode_coverage = 0.0;  // restricted to fork scenes; -1 if none
  double mean_diversity = 0.0;
  double wall_time_per_scene = 0.0;  // seconds, inference only
  std::vector<SceneEval> per_scene;
};

struct EvalReport {
  int n_scenes = 0;
  std::uint64_t seed = 0;
  double step_ratio = 0.0;  // vanilla steps / truncated steps
  MethodReport truncated;
  MethodReport vanilla;
};

/// Scores one plan result against a scene.
SceneEval score_candidates(const PlanResult& result, const Scene& scene,
                           const EvalConfig& cfg);

/// Runs one policy over every scene. The per-scene RNG stream is
/// derive_seed(derive_seed(cfg.seed, stream_tag), scene_index), so rows are
/// reproducible independently of evaluation order.
MethodReport evaluate_method(const TrainedPolicy& policy,
                             const std::vector<Scene>& scenes,
                             const NoiseSchedule& sched, const EvalConfig& cfg,
                             std::uint64_t stream_tag);

/// Head-to-head: truncated policy at cfg.trunc_steps vs vanilla baseline at
/// cfg.vanilla_steps over the same scenes.
EvalReport eval_suite(const TrainedPolicy& truncated,
                      const TrainedPolicy& vanilla,
                      const std::vector<Scene>& scenes,
                      const NoiseSchedule& sched, const EvalConfig& cfg);

/// Aligned plain-text table of the two method columns.
std::string format_report(const EvalReport& report);

}  // namespace tdp
