#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tdp/anchors.hpp"
#include "tdp/denoiser.hpp"
#include "tdp/io.hpp"
#include "tdp/metrics.hpp"
#include "tdp/policy.hpp"
#include "tdp/rng.hpp"
#include "tdp/schedule.hpp"
#include "tdp/svg.hpp"
#include "tdp/trajectory.hpp"
#include "tdp/world.hpp"

namespace py = pybind11;
using namespace tdp;

namespace {

Trajectory traj_from_pairs(const std::vector<std::pair<double, double>>& pts) {
  Trajectory t;
  t.points.reserve(pts.size());
  for (const auto& [x, y] : pts) t.points.push_back({x, y});
  return t;
}

}  // namespace

PYBIND11_MODULE(_tdplan, m) {
  m.doc() = "truncated diffusion trajectory planner core";

  py::class_<Vec2>(m, "Vec2")
      .def(py::init<>())
      .def(py::init([](double x, double y) { return Vec2{x, y}; }),
           py::arg("x"), py::arg("y"))
      .def_readwrite("x", &Vec2::x)
      .def_readwrite("y", &Vec2::y)
      .def("norm", &Vec2::norm)
      .def("__eq__",
           [](const Vec2& a, const Vec2& b) { return a == b; })
      .def("__repr__", [](const Vec2& v) {
        return "Vec2(" + std::to_string(v.x) + ", " + std::to_string(v.y) + ")";
      });

  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init<>())
      .def(py::init(&traj_from_pairs), py::arg("points"))
      .def_readwrite("points", &Trajectory::points)
      .def("__len__", &Trajectory::horizon)
      .def("flatten", &Trajectory::flatten)
      .def_static("from_flat", [](const std::vector<double>& flat) {
        return Trajectory::from_flat(flat);
      });

  m.def("ade", &ade, py::arg("a"), py::arg("b"));

  py::class_<Obstacle>(m, "Obstacle")
      .def(py::init<>())
      .def_readwrite("center", &Obstacle::center)
      .def_readwrite("radius", &Obstacle::radius)
      .def_readwrite("velocity", &Obstacle::velocity)
      .def("center_at", &Obstacle::center_at, py::arg("tau"));

  py::class_<EgoState>(m, "EgoState")
      .def(py::init<>())
      .def_readwrite("speed", &EgoState::speed)
      .def_readwrite("heading", &EgoState::heading);

  py::class_<Scene>(m, "Scene")
      .def(py::init<>())
      .def_readwrite("kind", &Scene::kind)
      .def_readwrite("seed", &Scene::seed)
      .def_readwrite("ego", &Scene::ego)
      .def_readwrite("obstacles", &Scene::obstacles)
      .def_readwrite("route", &Scene::route)
      .def_readwrite("corridor_half_width", &Scene::corridor_half_width)
      .def_readwrite("gt_modes", &Scene::gt_modes)
      .def_readwrite("dt", &Scene::dt);

  py::class_<SceneGenConfig>(m, "SceneGenConfig")
      .def(py::init<>())
      .def_readwrite("horizon", &SceneGenConfig::horizon)
      .def_readwrite("dt", &SceneGenConfig::dt);

  m.def("gen_scene", &gen_scene, py::arg("kind"), py::arg("seed"),
        py::arg("cfg") = SceneGenConfig{});

  py::class_<PdmScore>(m, "PdmScore")
      .def_readonly("nc", &PdmScore::nc)
      .def_readonly("dac", &PdmScore::dac)
      .def_readonly("ttc", &PdmScore::ttc)
      .def_readonly("comfort", &PdmScore::comfort)
      .def_readonly("progress", &PdmScore::progress)
      .def_readonly("total", &PdmScore::total);

  m.def("pdm_score", &pdm_score, py::arg("traj"), py::arg("scene"));
  m.def("collision_free", &collision_free, py::arg("traj"), py::arg("scene"));
  m.def("drivable", &drivable, py::arg("traj"), py::arg("scene"));

  py::class_<ContextTokens>(m, "ContextTokens")
      .def_readonly("rows", &ContextTokens::rows)
      .def_readonly("valid", &ContextTokens::valid)
      .def_readonly("n_valid", &ContextTokens::n_valid)
      .def_readonly_static("MAX_TOKENS", &ContextTokens::kMaxTokens)
      .def_readonly_static("DIM", &ContextTokens::kDim);

  m.def("scene_tokens", &scene_tokens, py::arg("scene"));

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform", py::overload_cast<>(&Rng::uniform))
      .def("normal", py::overload_cast<>(&Rng::normal));

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"));

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("total_steps", &NoiseSchedule::total_steps)
      .def_readonly("trunc_step", &NoiseSchedule::trunc_step)
      .def("beta", &NoiseSchedule::beta, py::arg("t"))
      .def("alpha", &NoiseSchedule::alpha, py::arg("t"))
      .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"));

  m.def("build_linear_schedule", &build_linear_schedule, py::arg("total_steps"),
        py::arg("beta_start"), py::arg("beta_end"), py::arg("trunc_fraction"));
  m.def(
      "diffuse",
      [](const std::vector<double>& x0, int t, const std::vector<double>& eps,
         const NoiseSchedule& sched) { return diffuse(x0, t, eps, sched); },
      py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("sched"));
  m.def(
      "ddim_step",
      [](const std::vector<double>& x_t, const std::vector<double>& x0_hat,
         int t, int t_next, const NoiseSchedule& sched) {
        return ddim_step(x_t, x0_hat, t, t_next, sched);
      },
      py::arg("x_t"), py::arg("x0_hat"), py::arg("t"), py::arg("t_next"),
      py::arg("sched"));
  m.def(
      "make_step_grid",
      [](int start, int n_steps) { return make_step_grid(start, n_steps).steps; },
      py::arg("start"), py::arg("n_steps"));

  py::class_<AnchorSet>(m, "AnchorSet")
      .def(py::init<>())
      .def_readwrite("anchors", &AnchorSet::anchors)
      .def_readwrite("inertia", &AnchorSet::inertia)
      .def("__len__", &AnchorSet::k);

  m.def("kmeans_anchors", &kmeans_anchors, py::arg("corpus"), py::arg("k"),
        py::arg("n_restarts"), py::arg("max_iters"), py::arg("seed"));
  m.def("nearest_anchor", &nearest_anchor, py::arg("traj"), py::arg("anchors"));
  m.def("anchored_sample", &anchored_sample, py::arg("anchor"), py::arg("sched"),
        py::arg("t"), py::arg("rng"));
  m.def("fit_anchors", &fit_anchors, py::arg("scenes"), py::arg("k"),
        py::arg("n_restarts"), py::arg("max_iters"), py::arg("seed"));

  py::class_<CascadeConfig>(m, "CascadeConfig")
      .def(py::init<>())
      .def_readwrite("stages", &CascadeConfig::stages)
      .def_readwrite("hidden", &CascadeConfig::hidden)
      .def_readwrite("t_embed", &CascadeConfig::t_embed)
      .def_readwrite("t_embed_raw", &CascadeConfig::t_embed_raw)
      .def_readwrite("horizon", &CascadeConfig::horizon)
      .def_readwrite("ctx_dim", &CascadeConfig::ctx_dim)
      .def_readwrite("ctx_tokens", &CascadeConfig::ctx_tokens)
      .def("traj_dim", &CascadeConfig::traj_dim);

  py::class_<ParamSlice>(m, "ParamSlice")
      .def_readonly("name", &ParamSlice::name)
      .def_readonly("offset", &ParamSlice::offset)
      .def_readonly("size", &ParamSlice::size);

  py::class_<DenoiserParams>(m, "DenoiserParams")
      .def(py::init<>())
      .def_readwrite("cfg", &DenoiserParams::cfg)
      .def_readwrite("values", &DenoiserParams::values);

  py::class_<StageOutput>(m, "StageOutput")
      .def_readonly("x0_hat", &StageOutput::x0_hat)
      .def_readonly("score_logit", &StageOutput::score_logit);

  m.def("param_count", &param_count, py::arg("cfg"));
  m.def("param_layout", &param_layout, py::arg("cfg"));
  m.def("init_params", &init_params, py::arg("cfg"), py::arg("seed"));
  m.def("time_embed", &time_embed, py::arg("t"), py::arg("dim"));
  m.def(
      "forward",
      [](const DenoiserParams& params, const std::vector<double>& x_t, int t,
         const ContextTokens& ctx) { return forward(params, x_t, t, ctx); },
      py::arg("params"), py::arg("x_t"), py::arg("t"), py::arg("ctx"));

  py::enum_<DiffuseSource>(m, "DiffuseSource")
      .value("ANCHOR", DiffuseSource::kAnchor)
      .value("GT", DiffuseSource::kGt);

  py::enum_<PolicyKind>(m, "PolicyKind")
      .value("TRUNCATED", PolicyKind::kTruncated)
      .value("VANILLA", PolicyKind::kVanilla);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("adam_eps", &TrainConfig::adam_eps)
      .def_readwrite("lambda_rec", &TrainConfig::lambda_rec)
      .def_readwrite("lambda_cls", &TrainConfig::lambda_cls)
      .def_readwrite("deep_supervision", &TrainConfig::deep_supervision)
      .def_readwrite("diffuse_source", &TrainConfig::diffuse_source)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<LossBreakdown>(m, "LossBreakdown")
      .def_readonly("rec", &LossBreakdown::rec)
      .def_readonly("cls", &LossBreakdown::cls)
      .def_readonly("total", &LossBreakdown::total);

  py::class_<PlanResult>(m, "PlanResult")
      .def(py::init<>())
      .def_readwrite("candidates", &PlanResult::candidates)
      .def_readwrite("scores", &PlanResult::scores)
      .def_readwrite("chosen", &PlanResult::chosen);

  py::class_<TrainedPolicy>(m, "TrainedPolicy")
      .def(py::init<>())
      .def_readwrite("kind", &TrainedPolicy::kind)
      .def_readwrite("params", &TrainedPolicy::params)
      .def_readwrite("anchors", &TrainedPolicy::anchors)
      .def_readonly("epoch_losses", &TrainedPolicy::epoch_losses);

  m.def("sigmoid", &sigmoid, py::arg("x"));
  m.def("bce_with_logits", &bce_with_logits, py::arg("logit"), py::arg("label"));
  m.def(
      "train_policy",
      [](PolicyKind kind, const std::vector<Scene>& scenes,
         const AnchorSet* anchors, const NoiseSchedule& sched,
         const CascadeConfig& ccfg, const TrainConfig& cfg,
         const std::function<void(int, const LossBreakdown&)>& on_epoch) {
        return train_policy(kind, scenes, anchors, sched, ccfg, cfg, on_epoch);
      },
      py::arg("kind"), py::arg("scenes"), py::arg("anchors").none(true),
      py::arg("sched"), py::arg("cascade"), py::arg("train"),
      py::arg("on_epoch") = py::none());
  m.def("plan", &plan, py::arg("params"), py::arg("scene"), py::arg("anchors"),
        py::arg("sched"), py::arg("n_steps"), py::arg("rng"));
  m.def("vanilla_plan", &vanilla_plan, py::arg("params"), py::arg("scene"),
        py::arg("sched"), py::arg("n_steps"), py::arg("k_samples"),
        py::arg("rng"));
  m.def(
      "select", [](const PlanResult& r) { return select(r); },
      py::arg("result"));

  py::enum_<DiversityMetric>(m, "DiversityMetric")
      .value("FINAL_WAYPOINT", DiversityMetric::kFinalWaypoint)
      .value("FULL_PATH", DiversityMetric::kFullPath);

  m.def("min_ade", &min_ade, py::arg("candidates"), py::arg("gt_modes"));
  m.def("mode_coverage", &mode_coverage, py::arg("candidates"),
        py::arg("gt_modes"), py::arg("threshold") = 0.5);
  m.def("diversity", &diversity, py::arg("candidates"),
        py::arg("metric") = DiversityMetric::kFinalWaypoint);

  py::class_<EvalConfig>(m, "EvalConfig")
      .def(py::init<>())
      .def_readwrite("trunc_steps", &EvalConfig::trunc_steps)
      .def_readwrite("vanilla_steps", &EvalConfig::vanilla_steps)
      .def_readwrite("vanilla_samples", &EvalConfig::vanilla_samples)
      .def_readwrite("coverage_threshold", &EvalConfig::coverage_threshold)
      .def_readwrite("diversity_metric", &EvalConfig::diversity_metric)
      .def_readwrite("seed", &EvalConfig::seed);

  py::class_<SceneEval>(m, "SceneEval")
      .def_readonly("pdms", &SceneEval::pdms)
      .def_readonly("min_ade", &SceneEval::min_ade)
      .def_readonly("mode_coverage", &SceneEval::mode_coverage)
      .def_readonly("diversity", &SceneEval::diversity);

  py::class_<MethodReport>(m, "MethodReport")
      .def_readonly("name", &MethodReport::name)
      .def_readonly("n_denoise_steps", &MethodReport::n_denoise_steps)
      .def_readonly("mean_pdms", &MethodReport::mean_pdms)
      .def_readonly("mean_min_ade", &MethodReport::mean_min_ade)
      .def_readonly("mean_mode_coverage", &MethodReport::mean_mode_coverage)
      .def_readonly("fork_mode_coverage", &MethodReport::fork_mode_coverage)
      .def_readonly("mean_diversity", &MethodReport::mean_diversity)
      .def_readonly("wall_time_per_scene", &MethodReport::wall_time_per_scene)
      .def_readonly("per_scene", &MethodReport::per_scene);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("n_scenes", &EvalReport::n_scenes)
      .def_readonly("seed", &EvalReport::seed)
      .def_readonly("step_ratio", &EvalReport::step_ratio)
      .def_readonly("truncated", &EvalReport::truncated)
      .def_readonly("vanilla", &EvalReport::vanilla);

  m.def("score_candidates", &score_candidates, py::arg("result"),
        py::arg("scene"), py::arg("cfg"));
  m.def("eval_suite", &eval_suite, py::arg("truncated"), py::arg("vanilla"),
        py::arg("scenes"), py::arg("sched"), py::arg("cfg"));
  m.def("format_report", &format_report, py::arg("report"));
  m.def(
      "report_json",
      [](const EvalReport& r) { return report_to_json(r).dump(2); },
      py::arg("report"));

  py::class_<ScheduleConfig>(m, "ScheduleConfig")
      .def(py::init<>())
      .def_readwrite("total_steps", &ScheduleConfig::total_steps)
      .def_readwrite("beta_start", &ScheduleConfig::beta_start)
      .def_readwrite("beta_end", &ScheduleConfig::beta_end)
      .def_readwrite("trunc_fraction", &ScheduleConfig::trunc_fraction);

  py::class_<AnchorConfig>(m, "AnchorConfig")
      .def(py::init<>())
      .def_readwrite("k", &AnchorConfig::k)
      .def_readwrite("restarts", &AnchorConfig::restarts)
      .def_readwrite("max_iters", &AnchorConfig::max_iters)
      .def_readwrite("seed", &AnchorConfig::seed);

  py::class_<DataConfig>(m, "DataConfig")
      .def(py::init<>())
      .def_readwrite("train_scenes", &DataConfig::train_scenes)
      .def_readwrite("eval_scenes", &DataConfig::eval_scenes)
      .def_readwrite("horizon", &DataConfig::horizon)
      .def_readwrite("dt", &DataConfig::dt)
      .def_readwrite("seed", &DataConfig::seed)
      .def_readwrite("kinds", &DataConfig::kinds);

  py::class_<BenchConfig>(m, "BenchConfig")
      .def(py::init<>())
      .def_readwrite("scenes", &BenchConfig::scenes);

  py::class_<PathsConfig>(m, "PathsConfig")
      .def(py::init<>())
      .def_readwrite("corpus", &PathsConfig::corpus)
      .def_readwrite("model", &PathsConfig::model)
      .def_readwrite("vanilla_model", &PathsConfig::vanilla_model)
      .def_readwrite("report", &PathsConfig::report)
      .def_readwrite("plot", &PathsConfig::plot);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("schedule", &RunConfig::schedule)
      .def_readwrite("anchors", &RunConfig::anchors)
      .def_readwrite("cascade", &RunConfig::cascade)
      .def_readwrite("train", &RunConfig::train)
      .def_readwrite("eval", &RunConfig::eval)
      .def_readwrite("data", &RunConfig::data)
      .def_readwrite("bench", &RunConfig::bench)
      .def_readwrite("paths", &RunConfig::paths);

  m.def("build_schedule", &build_schedule, py::arg("cfg"));
  m.def("load_config", &load_config, py::arg("path"));
  m.def("save_config", &save_config, py::arg("cfg"), py::arg("path"));
  m.def(
      "config_json",
      [](const RunConfig& cfg) { return config_to_json(cfg).dump(2); },
      py::arg("cfg"));
  m.def(
      "parse_config",
      [](const std::string& text) {
        return config_from_json(nlohmann::json::parse(text));
      },
      py::arg("text"));

  m.def("save_scenes", &save_scenes, py::arg("scenes"), py::arg("path"));
  m.def("load_scenes", &load_scenes, py::arg("path"));

  py::class_<ModelFile>(m, "ModelFile")
      .def(py::init<>())
      .def_readwrite("policy", &ModelFile::policy)
      .def_readwrite("schedule", &ModelFile::schedule);

  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "render_scene_svg",
      [](const Scene& scene, const PlanResult* result) {
        return render_scene_svg(scene, result);
      },
      py::arg("scene"), py::arg("result").none(true) = py::none());
}
