#include "tdp/metrics.hpp"

#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace tdp {
namespace {

constexpr std::uint64_t kTruncatedStream = 1;
constexpr std::uint64_t kVanillaStream = 2;

double mean_of(const std::vector<SceneEval>& rows, double SceneEval::*field) {
  double sum = 0.0;
  for (const auto& r : rows) sum += r.*field;
  return sum / static_cast<double>(rows.size());
}

}  // namespace

double min_ade(const std::vector<Trajectory>& candidates,
               const std::vector<Trajectory>& gt_modes) {
  if (candidates.empty() || gt_modes.empty()) {
    throw std::invalid_argument("min_ade: empty candidate or mode set");
  }
  double best = ade(candidates[0], gt_modes[0]);
  for (const auto& c : candidates) {
    for (const auto& m : gt_modes) {
      best = std::min(best, ade(c, m));
    }
  }
  return best;
}

double mode_coverage(const std::vector<Trajectory>& candidates,
                     const std::vector<Trajectory>& gt_modes, double threshold) {
  if (candidates.empty() || gt_modes.empty()) {
    throw std::invalid_argument("mode_coverage: empty candidate or mode set");
  }
  int covered = 0;
  for (const auto& m : gt_modes) {
    double best = ade(candidates[0], m);
    for (const auto& c : candidates) best = std::min(best, ade(c, m));
    if (best < threshold) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(gt_modes.size());
}

double diversity(const std::vector<Trajectory>& candidates,
                 DiversityMetric metric) {
  if (candidates.empty()) {
    throw std::invalid_argument("diversity: empty candidate set");
  }
  const std::size_t k = candidates.size();
  if (k == 1) return 0.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (metric == DiversityMetric::kFinalWaypoint) {
        sum += (candidates[i].points.back() - candidates[j].points.back()).norm();
      } else {
        sum += ade(candidates[i], candidates[j]);
      }
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

SceneEval score_candidates(const PlanResult& result, const Scene& scene,
                           const EvalConfig& cfg) {
  SceneEval row;
  row.pdms = pdm_score(select(result), scene).total;
  row.min_ade = min_ade(result.candidates, scene.gt_modes);
  row.mode_coverage =
      mode_coverage(result.candidates, scene.gt_modes, cfg.coverage_threshold);
  row.diversity = diversity(result.candidates, cfg.diversity_metric);
  return row;
}

MethodReport evaluate_method(const TrainedPolicy& policy,
                             const std::vector<Scene>& scenes,
                             const NoiseSchedule& sched, const EvalConfig& cfg,
                             std::uint64_t stream_tag) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  const bool truncated = policy.kind == PolicyKind::kTruncated;
  MethodReport report;
  report.name = truncated ? "truncated" : "vanilla";
  report.n_denoise_steps = truncated ? cfg.trunc_steps : cfg.vanilla_steps;
  report.per_scene.reserve(scenes.size());

  const std::uint64_t method_seed = derive_seed(cfg.seed, stream_tag);
  double wall = 0.0;
  double fork_cov_sum = 0.0;
  int fork_count = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& scene = scenes[i];
    Rng rng(derive_seed(method_seed, i));
    const auto t0 = std::chrono::steady_clock::now();
    const PlanResult result =
        truncated
            ? plan(policy.params, scene, policy.anchors, sched, cfg.trunc_steps, rng)
            : vanilla_plan(policy.params, scene, sched, cfg.vanilla_steps,
                           cfg.vanilla_samples, rng);
    const auto t1 = std::chrono::steady_clock::now();
    wall += std::chrono::duration<double>(t1 - t0).count();

    const SceneEval row = score_candidates(result, scene, cfg);
    if (scene.kind == "fork") {
      fork_cov_sum += row.mode_coverage;
      ++fork_count;
    }
    report.per_scene.push_back(row);
  }

  report.mean_pdms = mean_of(report.per_scene, &SceneEval::pdms);
  report.mean_min_ade = mean_of(report.per_scene, &SceneEval::min_ade);
  report.mean_mode_coverage = mean_of(report.per_scene, &SceneEval::mode_coverage);
  report.mean_diversity = mean_of(report.per_scene, &SceneEval::diversity);
  report.fork_mode_coverage =
      fork_count > 0 ? fork_cov_sum / static_cast<double>(fork_count) : -1.0;
  report.wall_time_per_scene = wall / static_cast<double>(scenes.size());
  return report;
}

EvalReport eval_suite(const TrainedPolicy& truncated, const TrainedPolicy& vanilla,
                      const std::vector<Scene>& scenes, const NoiseSchedule& sched,
                      const EvalConfig& cfg) {
  if (scenes.empty()) throw std::invalid_argument("eval_suite: no scenes");
  EvalReport report;
  report.n_scenes = static_cast<int>(scenes.size());
  report.seed = cfg.seed;
  report.truncated = evaluate_method(truncated, scenes, sched, cfg, kTruncatedStream);
  report.vanilla = evaluate_method(vanilla, scenes, sched, cfg, kVanillaStream);
  report.step_ratio = static_cast<double>(cfg.vanilla_steps) /
                      static_cast<double>(cfg.trunc_steps);
  return report;
}

std::string format_report(const EvalReport& report) {
  char buf[256];
  std::string out;
  out += "metric                 truncated      vanilla\n";
  const auto line = [&](const char* name, double a, double b) {
    std::snprintf(buf, sizeof(buf), "%-20s %12.4f %12.4f\n", name, a, b);
    out += buf;
  };
  const MethodReport& t = report.truncated;
  const MethodReport& v = report.vanilla;
  line("denoise_steps", t.n_denoise_steps, v.n_denoise_steps);
  line("mean_pdms", t.mean_pdms, v.mean_pdms);
  line("min_ade", t.mean_min_ade, v.mean_min_ade);
  line("mode_coverage", t.mean_mode_coverage, v.mean_mode_coverage);
  line("fork_mode_coverage", t.fork_mode_coverage, v.fork_mode_coverage);
  line("diversity", t.mean_diversity, v.mean_diversity);
  line("wall_time_per_scene", t.wall_time_per_scene, v.wall_time_per_scene);
  std::snprintf(buf, sizeof(buf), "%-20s %12.1f\n", "step_ratio",
                report.step_ratio);
  out += buf;
  std::snprintf(buf, sizeof(buf), "scenes=%d seed=%llu\n", report.n_scenes,
                static_cast<unsigned long long>(report.seed));
  out += buf;
  return out;
}

}  // namespace tdp
