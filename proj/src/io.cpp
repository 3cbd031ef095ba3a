#include "tdp/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdp {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "model container assumes a little-endian host");

void reject_unknown_keys(const json& j, const char* where,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw std::invalid_argument(std::string("config: ") + where +
                                " must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw std::invalid_argument(std::string("config: unknown key '") + key +
                                  "' in " + where);
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* diffuse_source_name(DiffuseSource s) {
  return s == DiffuseSource::kAnchor ? "anchor" : "gt";
}

DiffuseSource diffuse_source_from(const std::string& s) {
  if (s == "anchor") return DiffuseSource::kAnchor;
  if (s == "gt") return DiffuseSource::kGt;
  throw std::invalid_argument("config: diffuse_source must be 'anchor' or 'gt'");
}

const char* diversity_name(DiversityMetric m) {
  return m == DiversityMetric::kFinalWaypoint ? "final_waypoint" : "full_path";
}

DiversityMetric diversity_from(const std::string& s) {
  if (s == "final_waypoint") return DiversityMetric::kFinalWaypoint;
  if (s == "full_path") return DiversityMetric::kFullPath;
  throw std::invalid_argument(
      "config: diversity_metric must be 'final_waypoint' or 'full_path'");
}

json points_to_json(const std::vector<Vec2>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

std::vector<Vec2> points_from_json(const json& arr) {
  std::vector<Vec2> pts;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) {
      throw std::invalid_argument("scene: waypoint must be an [x, y] pair");
    }
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return pts;
}

void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_i64(std::ostream& os, std::int64_t v) { write_bytes(os, &v, 8); }
void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }

void read_bytes(std::istream& is, void* data, std::size_t n,
                const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw std::runtime_error(std::string("model file truncated while reading ") +
                             what);
  }
}

std::int64_t read_i64(std::istream& is, const char* what) {
  std::int64_t v = 0;
  read_bytes(is, &v, 8, what);
  return v;
}

double read_f64(std::istream& is, const char* what) {
  double v = 0.0;
  read_bytes(is, &v, 8, what);
  return v;
}

void expect_magic(std::istream& is, const char* magic) {
  char buf[8] = {};
  const std::size_t n = std::strlen(magic);
  read_bytes(is, buf, n, magic);
  if (std::memcmp(buf, magic, n) != 0) {
    throw std::runtime_error(std::string("model file: expected section ") + magic);
  }
}

}  // namespace

NoiseSchedule build_schedule(const ScheduleConfig& cfg) {
  return build_linear_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end,
                               cfg.trunc_fraction);
}

std::vector<Scene> generate_corpus(const DataConfig& cfg) {
  SceneGenConfig gcfg;
  gcfg.horizon = cfg.horizon;
  gcfg.dt = cfg.dt;
  const int total = cfg.train_scenes + cfg.eval_scenes;
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const std::string& kind =
        cfg.kinds[static_cast<std::size_t>(i) % cfg.kinds.size()];
    scenes.push_back(
        gen_scene(kind, derive_seed(cfg.seed, static_cast<std::uint64_t>(i)), gcfg));
  }
  return scenes;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  json j;
  j["schedule"] = {{"total_steps", cfg.schedule.total_steps},
                   {"beta_start", cfg.schedule.beta_start},
                   {"beta_end", cfg.schedule.beta_end},
                   {"trunc_fraction", cfg.schedule.trunc_fraction}};
  j["anchors"] = {{"k", cfg.anchors.k},
                  {"restarts", cfg.anchors.restarts},
                  {"max_iters", cfg.anchors.max_iters},
                  {"seed", cfg.anchors.seed}};
  j["cascade"] = {{"stages", cfg.cascade.stages},
                  {"hidden", cfg.cascade.hidden},
                  {"t_embed", cfg.cascade.t_embed},
                  {"t_embed_raw", cfg.cascade.t_embed_raw},
                  {"horizon", cfg.cascade.horizon}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"adam_eps", cfg.train.adam_eps},
                {"lambda_rec", cfg.train.lambda_rec},
                {"lambda_cls", cfg.train.lambda_cls},
                {"deep_supervision", cfg.train.deep_supervision},
                {"diffuse_source", diffuse_source_name(cfg.train.diffuse_source)},
                {"seed", cfg.train.seed}};
  j["eval"] = {{"trunc_steps", cfg.eval.trunc_steps},
               {"vanilla_steps", cfg.eval.vanilla_steps},
               {"vanilla_samples", cfg.eval.vanilla_samples},
               {"coverage_threshold", cfg.eval.coverage_threshold},
               {"diversity_metric", diversity_name(cfg.eval.diversity_metric)},
               {"seed", cfg.eval.seed}};
  j["data"] = {{"train_scenes", cfg.data.train_scenes},
               {"eval_scenes", cfg.data.eval_scenes},
               {"horizon", cfg.data.horizon},
               {"dt", cfg.data.dt},
               {"seed", cfg.data.seed},
               {"kinds", cfg.data.kinds}};
  j["bench"] = {{"scenes", cfg.bench.scenes}};
  j["paths"] = {{"corpus", cfg.paths.corpus},
                {"model", cfg.paths.model},
                {"vanilla_model", cfg.paths.vanilla_model},
                {"report", cfg.paths.report},
                {"plot", cfg.paths.plot}};
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  reject_unknown_keys(j, "config root",
                      {"schedule", "anchors", "cascade", "train", "eval", "data",
                       "bench", "paths"});
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown_keys(s, "schedule",
                        {"total_steps", "beta_start", "beta_end", "trunc_fraction"});
    maybe(s, "total_steps", cfg.schedule.total_steps);
    maybe(s, "beta_start", cfg.schedule.beta_start);
    maybe(s, "beta_end", cfg.schedule.beta_end);
    maybe(s, "trunc_fraction", cfg.schedule.trunc_fraction);
  }
  if (j.contains("anchors")) {
    const json& s = j.at("anchors");
    reject_unknown_keys(s, "anchors", {"k", "restarts", "max_iters", "seed"});
    maybe(s, "k", cfg.anchors.k);
    maybe(s, "restarts", cfg.anchors.restarts);
    maybe(s, "max_iters", cfg.anchors.max_iters);
    maybe(s, "seed", cfg.anchors.seed);
  }
  if (j.contains("cascade")) {
    const json& s = j.at("cascade");
    reject_unknown_keys(s, "cascade",
                        {"stages", "hidden", "t_embed", "t_embed_raw", "horizon"});
    maybe(s, "stages", cfg.cascade.stages);
    maybe(s, "hidden", cfg.cascade.hidden);
    maybe(s, "t_embed", cfg.cascade.t_embed);
    maybe(s, "t_embed_raw", cfg.cascade.t_embed_raw);
    maybe(s, "horizon", cfg.cascade.horizon);
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    reject_unknown_keys(s, "train",
                        {"epochs", "batch_size", "learning_rate", "beta1", "beta2",
                         "adam_eps", "lambda_rec", "lambda_cls", "deep_supervision",
                         "diffuse_source", "seed"});
    maybe(s, "epochs", cfg.train.epochs);
    maybe(s, "batch_size", cfg.train.batch_size);
    maybe(s, "learning_rate", cfg.train.learning_rate);
    maybe(s, "beta1", cfg.train.beta1);
    maybe(s, "beta2", cfg.train.beta2);
    maybe(s, "adam_eps", cfg.train.adam_eps);
    maybe(s, "lambda_rec", cfg.train.lambda_rec);
    maybe(s, "lambda_cls", cfg.train.lambda_cls);
    maybe(s, "deep_supervision", cfg.train.deep_supervision);
    if (s.contains("diffuse_source")) {
      cfg.train.diffuse_source =
          diffuse_source_from(s.at("diffuse_source").get<std::string>());
    }
    maybe(s, "seed", cfg.train.seed);
  }
  if (j.contains("eval")) {
    const json& s = j.at("eval");
    reject_unknown_keys(s, "eval",
                        {"trunc_steps", "vanilla_steps", "vanilla_samples",
                         "coverage_threshold", "diversity_metric", "seed"});
    maybe(s, "trunc_steps", cfg.eval.trunc_steps);
    maybe(s, "vanilla_steps", cfg.eval.vanilla_steps);
    maybe(s, "vanilla_samples", cfg.eval.vanilla_samples);
    maybe(s, "coverage_threshold", cfg.eval.coverage_threshold);
    if (s.contains("diversity_metric")) {
      cfg.eval.diversity_metric =
          diversity_from(s.at("diversity_metric").get<std::string>());
    }
    maybe(s, "seed", cfg.eval.seed);
  }
  if (j.contains("data")) {
    const json& s = j.at("data");
    reject_unknown_keys(
        s, "data", {"train_scenes", "eval_scenes", "horizon", "dt", "seed", "kinds"});
    maybe(s, "train_scenes", cfg.data.train_scenes);
    maybe(s, "eval_scenes", cfg.data.eval_scenes);
    maybe(s, "horizon", cfg.data.horizon);
    maybe(s, "dt", cfg.data.dt);
    maybe(s, "seed", cfg.data.seed);
    maybe(s, "kinds", cfg.data.kinds);
  }
  if (j.contains("bench")) {
    const json& s = j.at("bench");
    reject_unknown_keys(s, "bench", {"scenes"});
    maybe(s, "scenes", cfg.bench.scenes);
  }
  if (j.contains("paths")) {
    const json& s = j.at("paths");
    reject_unknown_keys(s, "paths",
                        {"corpus", "model", "vanilla_model", "report", "plot"});
    maybe(s, "corpus", cfg.paths.corpus);
    maybe(s, "model", cfg.paths.model);
    maybe(s, "vanilla_model", cfg.paths.vanilla_model);
    maybe(s, "report", cfg.paths.report);
    maybe(s, "plot", cfg.paths.plot);
  }

  if (cfg.data.train_scenes < 0 || cfg.data.eval_scenes < 0 ||
      cfg.data.horizon < 1 || cfg.data.dt <= 0.0) {
    throw std::invalid_argument("config: data section out of range");
  }
  if (cfg.anchors.k < 1 || cfg.anchors.restarts < 1 || cfg.anchors.max_iters < 1) {
    throw std::invalid_argument("config: anchors section out of range");
  }
  if (cfg.train.epochs < 0) {
    throw std::invalid_argument("config: epochs must be >= 0");
  }
  if (cfg.eval.trunc_steps < 1 || cfg.eval.vanilla_steps < 1 ||
      cfg.eval.vanilla_samples < 1 || cfg.eval.coverage_threshold <= 0.0) {
    throw std::invalid_argument("config: eval section out of range");
  }
  if (cfg.data.kinds.empty()) {
    throw std::invalid_argument("config: data.kinds must not be empty");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

nlohmann::json scene_to_json(const Scene& scene) {
  json j;
  j["kind"] = scene.kind;
  j["seed"] = scene.seed;
  j["dt"] = scene.dt;
  j["corridor_half_width"] = scene.corridor_half_width;
  j["ego"] = {{"speed", scene.ego.speed}, {"heading", scene.ego.heading}};
  json obs = json::array();
  for (const auto& o : scene.obstacles) {
    obs.push_back({{"x", o.center.x},
                   {"y", o.center.y},
                   {"radius", o.radius},
                   {"vx", o.velocity.x},
                   {"vy", o.velocity.y}});
  }
  j["obstacles"] = obs;
  json route = json::array();
  for (const auto& branch : scene.route) route.push_back(points_to_json(branch));
  j["route"] = route;
  json modes = json::array();
  for (const auto& m : scene.gt_modes) modes.push_back(points_to_json(m.points));
  j["gt_modes"] = modes;
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, "scene",
                      {"kind", "seed", "dt", "corridor_half_width", "ego",
                       "obstacles", "route", "gt_modes"});
  Scene scene;
  scene.kind = j.at("kind").get<std::string>();
  scene.seed = j.at("seed").get<std::uint64_t>();
  scene.dt = j.at("dt").get<double>();
  scene.corridor_half_width = j.at("corridor_half_width").get<double>();
  scene.ego.speed = j.at("ego").at("speed").get<double>();
  scene.ego.heading = j.at("ego").at("heading").get<double>();
  for (const auto& o : j.at("obstacles")) {
    Obstacle ob;
    ob.center = {o.at("x").get<double>(), o.at("y").get<double>()};
    ob.radius = o.at("radius").get<double>();
    ob.velocity = {o.at("vx").get<double>(), o.at("vy").get<double>()};
    scene.obstacles.push_back(ob);
  }
  for (const auto& b : j.at("route")) scene.route.push_back(points_from_json(b));
  for (const auto& m : j.at("gt_modes")) {
    scene.gt_modes.push_back(Trajectory(points_from_json(m)));
  }
  return scene;
}

void save_scenes(const std::vector<Scene>& scenes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : scenes) out << scene_to_json(s).dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": bad scene line: " + e.what());
    }
  }
  return scenes;
}

void save_model(const ModelFile& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const TrainedPolicy& p = model.policy;
  write_bytes(out, "TDPC1", 5);
  const std::uint8_t kind = p.kind == PolicyKind::kTruncated ? 0 : 1;
  write_bytes(out, &kind, 1);

  write_bytes(out, "TDPL1", 5);
  const CascadeConfig& c = p.params.cfg;
  write_i64(out, c.stages);
  write_i64(out, c.hidden);
  write_i64(out, c.t_embed);
  write_i64(out, c.t_embed_raw);
  write_i64(out, c.horizon);
  write_i64(out, c.ctx_dim);
  write_i64(out, c.ctx_tokens);
  write_i64(out, static_cast<std::int64_t>(p.params.values.size()));
  for (const double v : p.params.values) write_f64(out, v);

  write_bytes(out, "ANCH1", 5);
  write_i64(out, static_cast<std::int64_t>(p.anchors.k()));
  const std::int64_t ah =
      p.anchors.k() > 0 ? static_cast<std::int64_t>(p.anchors.anchors[0].horizon())
                        : 0;
  write_i64(out, ah);
  write_f64(out, p.anchors.inertia);
  for (const auto& a : p.anchors.anchors) {
    for (const auto& pt : a.points) {
      write_f64(out, pt.x);
      write_f64(out, pt.y);
    }
  }

  write_bytes(out, "SCHD1", 5);
  write_i64(out, model.schedule.total_steps);
  write_f64(out, model.schedule.beta_start);
  write_f64(out, model.schedule.beta_end);
  write_f64(out, model.schedule.trunc_fraction);
  if (!out) throw std::runtime_error("write failed: " + path);
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  expect_magic(in, "TDPC1");
  std::uint8_t kind = 0;
  read_bytes(in, &kind, 1, "policy kind");
  if (kind > 1) throw std::runtime_error("model file: unknown policy kind");

  ModelFile model;
  model.policy.kind = kind == 0 ? PolicyKind::kTruncated : PolicyKind::kVanilla;

  expect_magic(in, "TDPL1");
  CascadeConfig c;
  c.stages = static_cast<int>(read_i64(in, "stages"));
  c.hidden = static_cast<int>(read_i64(in, "hidden"));
  c.t_embed = static_cast<int>(read_i64(in, "t_embed"));
  c.t_embed_raw = static_cast<int>(read_i64(in, "t_embed_raw"));
  c.horizon = static_cast<int>(read_i64(in, "horizon"));
  c.ctx_dim = static_cast<int>(read_i64(in, "ctx_dim"));
  c.ctx_tokens = static_cast<int>(read_i64(in, "ctx_tokens"));
  const std::int64_t n = read_i64(in, "parameter count");
  if (n < 0 || static_cast<std::size_t>(n) != param_count(c)) {
    throw std::runtime_error("model file: parameter count does not match shape");
  }
  model.policy.params.cfg = c;
  model.policy.params.values.resize(static_cast<std::size_t>(n));
  for (auto& v : model.policy.params.values) v = read_f64(in, "parameters");

  expect_magic(in, "ANCH1");
  const std::int64_t k = read_i64(in, "anchor count");
  const std::int64_t ah = read_i64(in, "anchor horizon");
  if (k < 0 || ah < 0 || (k > 0 && ah == 0)) {
    throw std::runtime_error("model file: bad anchor shape");
  }
  model.policy.anchors.inertia = read_f64(in, "anchor inertia");
  for (std::int64_t i = 0; i < k; ++i) {
    Trajectory t;
    for (std::int64_t h = 0; h < ah; ++h) {
      const double x = read_f64(in, "anchor points");
      const double y = read_f64(in, "anchor points");
      t.points.push_back({x, y});
    }
    model.policy.anchors.anchors.push_back(std::move(t));
  }

  expect_magic(in, "SCHD1");
  model.schedule.total_steps = static_cast<int>(read_i64(in, "total_steps"));
  model.schedule.beta_start = read_f64(in, "beta_start");
  model.schedule.beta_end = read_f64(in, "beta_end");
  model.schedule.trunc_fraction = read_f64(in, "trunc_fraction");
  return model;
}

nlohmann::json report_to_json(const EvalReport& report) {
  const auto method = [](const MethodReport& m) {
    return json{{"name", m.name},
                {"n_denoise_steps", m.n_denoise_steps},
                {"mean_pdms", m.mean_pdms},
                {"min_ade", m.mean_min_ade},
                {"mode_coverage", m.mean_mode_coverage},
                {"fork_mode_coverage", m.fork_mode_coverage},
                {"diversity", m.mean_diversity},
                {"wall_time_per_scene", m.wall_time_per_scene}};
  };
  return json{{"n_scenes", report.n_scenes},
              {"seed", report.seed},
              {"step_ratio", report.step_ratio},
              {"truncated", method(report.truncated)},
              {"vanilla", method(report.vanilla)}};
}

}  // namespace tdp
