#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdp/io.hpp"
#include "tdp/metrics.hpp"
#include "tdp/policy.hpp"
#include "tdp/svg.hpp"

namespace {

using namespace tdp;

RunConfig load_run_config(const std::string& path,
                          const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = load_config(path);
  if (seed) {
    cfg.data.seed = *seed;
    cfg.train.seed = *seed;
    cfg.eval.seed = *seed;
    cfg.anchors.seed = *seed;
  }
  return cfg;
}

void check_horizon(const std::vector<Scene>& scenes, int model_horizon,
                   const char* what) {
  for (const auto& s : scenes) {
    for (const auto& m : s.gt_modes) {
      if (static_cast<int>(m.horizon()) != model_horizon) {
        throw std::runtime_error(
            std::string(what) + ": horizon mismatch: corpus has " +
            std::to_string(m.horizon()) + " waypoints but the model expects " +
            std::to_string(model_horizon));
      }
    }
  }
}

// first train_scenes lines train, the next eval_scenes lines evaluate
std::vector<Scene> eval_slice(const std::vector<Scene>& all, const RunConfig& cfg) {
  const std::size_t lo = static_cast<std::size_t>(cfg.data.train_scenes);
  const std::size_t hi = lo + static_cast<std::size_t>(cfg.data.eval_scenes);
  if (all.size() < hi) {
    throw std::runtime_error(
        "corpus has " + std::to_string(all.size()) + " scenes but the config expects " +
        std::to_string(cfg.data.train_scenes) + " train + " +
        std::to_string(cfg.data.eval_scenes) + " eval");
  }
  return std::vector<Scene>(all.begin() + static_cast<std::ptrdiff_t>(lo),
                            all.begin() + static_cast<std::ptrdiff_t>(hi));
}

std::vector<Scene> train_slice(const std::vector<Scene>& all, const RunConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(cfg.data.train_scenes);
  if (all.size() < n) {
    throw std::runtime_error("corpus has " + std::to_string(all.size()) +
                             " scenes but the config expects " + std::to_string(n) +
                             " train scenes");
  }
  return std::vector<Scene>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
}

void print_epoch(int epoch, const LossBreakdown& loss) {
  std::printf("epoch=%d rec=%.9g cls=%.9g total=%.9g\n", epoch, loss.rec, loss.cls,
              loss.total);
}

TrainedPolicy train_one(PolicyKind kind, const std::vector<Scene>& scenes,
                        const AnchorSet* anchors, const NoiseSchedule& sched,
                        const RunConfig& cfg) {
  std::printf("# policy=%s\n", kind == PolicyKind::kTruncated ? "truncated" : "vanilla");
  if (cfg.train.epochs == 0) {
    TrainedPolicy p;
    p.kind = kind;
    p.params = init_params(cfg.cascade, derive_seed(cfg.train.seed, 1));
    if (kind == PolicyKind::kTruncated) p.anchors = *anchors;
    return p;
  }
  return train_policy(kind, scenes, anchors, sched, cfg.cascade, cfg.train,
                      print_epoch);
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_path) {
  const auto scenes = generate_corpus(cfg.data);
  save_scenes(scenes, out_path);
  std::printf("wrote %d train + %d eval scenes to %s\n", cfg.data.train_scenes,
              cfg.data.eval_scenes, out_path.c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& corpus_path,
              const std::string& model_path, const std::string& vanilla_path,
              bool baseline) {
  const auto all = load_scenes(corpus_path);
  const auto train_scenes = train_slice(all, cfg);
  check_horizon(train_scenes, cfg.cascade.horizon, "train");
  const NoiseSchedule sched = build_schedule(cfg.schedule);

  const AnchorSet anchors = fit_anchors(train_scenes, cfg.anchors.k,
                                        cfg.anchors.restarts, cfg.anchors.max_iters,
                                        cfg.anchors.seed);
  const TrainedPolicy trunc =
      train_one(PolicyKind::kTruncated, train_scenes, &anchors, sched, cfg);
  save_model({trunc, cfg.schedule}, model_path);
  std::printf("wrote model to %s\n", model_path.c_str());

  if (baseline) {
    const TrainedPolicy vanil =
        train_one(PolicyKind::kVanilla, train_scenes, nullptr, sched, cfg);
    save_model({vanil, cfg.schedule}, vanilla_path);
    std::printf("wrote model to %s\n", vanilla_path.c_str());
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& corpus_path,
             const std::string& model_path, const std::string& vanilla_path,
             const std::string& report_path) {
  const auto all = load_scenes(corpus_path);
  const auto scenes = eval_slice(all, cfg);

  const ModelFile trunc = load_model(model_path);
  const ModelFile vanil = load_model(vanilla_path);
  if (trunc.policy.kind != PolicyKind::kTruncated || trunc.policy.anchors.k() == 0) {
    throw std::runtime_error(model_path + " is not a truncated-policy model");
  }
  if (vanil.policy.kind != PolicyKind::kVanilla) {
    throw std::runtime_error(vanilla_path + " is not a vanilla-policy model");
  }
  check_horizon(scenes, trunc.policy.params.cfg.horizon, "eval");
  check_horizon(scenes, vanil.policy.params.cfg.horizon, "eval");

  const NoiseSchedule sched = build_schedule(trunc.schedule);
  const NoiseSchedule sched_v = build_schedule(vanil.schedule);
  if (sched.total_steps != sched_v.total_steps ||
      sched.trunc_step != sched_v.trunc_step) {
    throw std::runtime_error("models were trained under different schedules");
  }

  const EvalReport report =
      eval_suite(trunc.policy, vanil.policy, scenes, sched, cfg.eval);
  std::ofstream out(report_path);
  if (!out) throw std::runtime_error("cannot open for writing: " + report_path);
  out << report_to_json(report).dump(2) << "\n";
  std::fputs(format_report(report).c_str(), stdout);
  std::printf("wrote report to %s\n", report_path.c_str());
  return 0;
}

int cmd_plot(const RunConfig& cfg, const std::string& scene_path, int line_index,
             const std::string& model_path, const std::string& out_path) {
  const auto all = load_scenes(scene_path);
  if (line_index < 0 || static_cast<std::size_t>(line_index) >= all.size()) {
    throw std::runtime_error("scene index " + std::to_string(line_index) +
                             " outside corpus of " + std::to_string(all.size()) +
                             " scenes");
  }
  const Scene& scene = all[static_cast<std::size_t>(line_index)];
  const ModelFile model = load_model(model_path);
  const NoiseSchedule sched = build_schedule(model.schedule);

  PlanResult result;
  Rng rng(derive_seed(derive_seed(cfg.eval.seed, 1),
                      static_cast<std::uint64_t>(line_index)));
  if (model.policy.kind == PolicyKind::kTruncated) {
    result = plan(model.policy.params, scene, model.policy.anchors, sched,
                  cfg.eval.trunc_steps, rng);
  } else {
    result = vanilla_plan(model.policy.params, scene, sched, cfg.eval.vanilla_steps,
                          cfg.eval.vanilla_samples, rng);
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open for writing: " + out_path);
  out << render_scene_svg(scene, &result);
  std::printf("wrote plot to %s\n", out_path.c_str());
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& corpus_path,
              const std::string& model_path, const std::string& vanilla_path,
              int n_scenes) {
  if (n_scenes < 1) {
    throw std::runtime_error("bench needs at least one scene (got " +
                             std::to_string(n_scenes) + ")");
  }
  const auto all = load_scenes(corpus_path);
  auto scenes = eval_slice(all, cfg);
  if (static_cast<int>(scenes.size()) < n_scenes) {
    throw std::runtime_error("bench wants " + std::to_string(n_scenes) +
                             " scenes but the eval split has " +
                             std::to_string(scenes.size()));
  }
  scenes.resize(static_cast<std::size_t>(n_scenes));

  const ModelFile trunc = load_model(model_path);
  const ModelFile vanil = load_model(vanilla_path);
  const NoiseSchedule sched = build_schedule(trunc.schedule);

  const auto run = [&](const ModelFile& m, std::uint64_t tag, int steps) {
    std::vector<double> ms;
    ms.reserve(scenes.size());
    const std::uint64_t stream = derive_seed(cfg.eval.seed, tag);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      Rng rng(derive_seed(stream, i));
      const auto t0 = std::chrono::steady_clock::now();
      if (m.policy.kind == PolicyKind::kTruncated) {
        plan(m.policy.params, scenes[i], m.policy.anchors, sched, steps, rng);
      } else {
        vanilla_plan(m.policy.params, scenes[i], sched, steps,
                     cfg.eval.vanilla_samples, rng);
      }
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double mean = 0.0;
    for (const double v : ms) mean += v;
    mean /= static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    const std::size_t mid = ms.size() / 2;
    const double median =
        ms.size() % 2 == 1 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
    return std::pair<double, double>(mean, median);
  };

  const auto [tm, tmed] = run(trunc, 1, cfg.eval.trunc_steps);
  const auto [vm, vmed] = run(vanil, 2, cfg.eval.vanilla_steps);
  std::printf("bench scenes=%d\n", n_scenes);
  std::printf("truncated steps=%d mean_ms=%.6g median_ms=%.6g\n",
              cfg.eval.trunc_steps, tm, tmed);
  std::printf("vanilla steps=%d mean_ms=%.6g median_ms=%.6g\n",
              cfg.eval.vanilla_steps, vm, vmed);
  std::printf("step_ratio=%g\n", static_cast<double>(cfg.eval.vanilla_steps) /
                                     static_cast<double>(cfg.eval.trunc_steps));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"truncated diffusion trajectory planner"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_override;
  std::string corpus_override;
  std::string model_override;
  std::string vanilla_override;
  bool baseline = false;
  std::optional<int> epochs_override;
  int line_index = 0;
  std::optional<int> bench_scenes;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "path to the run config JSON")
        ->required();
    cmd->add_option("--seed", seed, "override every module seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the scene corpus");
  add_common(gen);
  gen->add_option("--out", out_override, "corpus output path");

  CLI::App* train = app.add_subcommand("train", "fit anchors and train the policy");
  add_common(train);
  train->add_option("--corpus", corpus_override, "corpus path");
  train->add_option("--out", out_override, "model output path");
  train->add_option("--vanilla-out", vanilla_override, "baseline model output path");
  train->add_flag("--baseline", baseline, "also train the vanilla baseline");
  train->add_option("--epochs", epochs_override, "override the epoch budget");

  CLI::App* eval = app.add_subcommand("eval", "run the head-to-head evaluation");
  add_common(eval);
  eval->add_option("--corpus", corpus_override, "corpus path");
  eval->add_option("--model", model_override, "truncated model path");
  eval->add_option("--vanilla-model", vanilla_override, "vanilla model path");
  eval->add_option("--out", out_override, "report output path");

  CLI::App* plot = app.add_subcommand("plot", "render one scene and plan as SVG");
  add_common(plot);
  plot->add_option("--scene-file", corpus_override, "scene corpus path");
  plot->add_option("--line-index", line_index, "zero-based scene line");
  plot->add_option("--model", model_override, "model path");
  plot->add_option("--out", out_override, "SVG output path");

  CLI::App* bench = app.add_subcommand("bench", "time both planners");
  add_common(bench);
  bench->add_option("--corpus", corpus_override, "corpus path");
  bench->add_option("--model", model_override, "truncated model path");
  bench->add_option("--vanilla-model", vanilla_override, "vanilla model path");
  bench->add_option("--scenes", bench_scenes, "number of scenes to time");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = load_run_config(config_path, seed);
    if (epochs_override && *epochs_override < 0) {
      throw std::runtime_error("--epochs must be >= 0");
    }
    RunConfig run_cfg = cfg;
    if (epochs_override) run_cfg.train.epochs = *epochs_override;

    const std::string corpus =
        corpus_override.empty() ? run_cfg.paths.corpus : corpus_override;
    const std::string model =
        model_override.empty() ? run_cfg.paths.model : model_override;
    const std::string vanilla =
        vanilla_override.empty() ? run_cfg.paths.vanilla_model : vanilla_override;

    if (gen->parsed()) {
      return cmd_gen_data(run_cfg,
                          out_override.empty() ? run_cfg.paths.corpus : out_override);
    }
    if (train->parsed()) {
      return cmd_train(run_cfg, corpus,
                       out_override.empty() ? run_cfg.paths.model : out_override,
                       vanilla, baseline);
    }
    if (eval->parsed()) {
      return cmd_eval(run_cfg, corpus, model, vanilla,
                      out_override.empty() ? run_cfg.paths.report : out_override);
    }
    if (plot->parsed()) {
      return cmd_plot(run_cfg, corpus, line_index, model,
                      out_override.empty() ? run_cfg.paths.plot : out_override);
    }
    if (bench->parsed()) {
      return cmd_bench(run_cfg, corpus, model, vanilla,
                       bench_scenes ? *bench_scenes : run_cfg.bench.scenes);
    }
  } catch (const std::exception& e) {
    std::cerr << "tdplan: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
