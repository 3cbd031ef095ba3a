#include "tdp/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "tdp/rng.hpp"

namespace tdp {

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squared_norm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

double polyline_length(std::span<const Vec2> pts) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    total += (pts[i + 1] - pts[i]).norm();
  }
  return total;
}

std::vector<Vec2> resample_polyline(std::span<const Vec2> pts, int n) {
  if (pts.size() < 2 || n < 2) {
    throw std::invalid_argument("resample_polyline: need >= 2 points and n >= 2");
  }
  const double total = polyline_length(pts);
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double s = total * static_cast<double>(j) / static_cast<double>(n - 1);
    out.push_back(point_at_arc_length(pts, s));
  }
  return out;
}

double distance_to_route(const Vec2& p, const Scene& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& branch : scene.route) {
    for (std::size_t i = 0; i + 1 < branch.size(); ++i) {
      best = std::min(best, point_segment_distance(p, branch[i], branch[i + 1]));
    }
  }
  return best;
}

double project_arc_length(const Vec2& p, std::span<const Vec2> pts) {
  if (pts.size() < 2) {
    throw std::invalid_argument("project_arc_length: polyline needs >= 2 points");
  }
  double best_dist = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  double walked = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const Vec2 ab = pts[i + 1] - pts[i];
    const double len2 = ab.squared_norm();
    const double len = std::sqrt(len2);
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp((p - pts[i]).dot(ab) / len2, 0.0, 1.0);
    const double d = (p - (pts[i] + t * ab)).norm();
    if (d < best_dist) {
      best_dist = d;
      best_s = walked + t * len;
    }
    walked += len;
  }
  return best_s;
}

Vec2 point_at_arc_length(std::span<const Vec2> pts, double s) {
  if (pts.empty()) {
    throw std::invalid_argument("point_at_arc_length: empty polyline");
  }
  if (s <= 0.0) return pts.front();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double len = (pts[i + 1] - pts[i]).norm();
    if (s <= len && len > 0.0) {
      return pts[i] + (s / len) * (pts[i + 1] - pts[i]);
    }
    s -= len;
  }
  return pts.back();
}

bool collision_free(const Trajectory& traj, const Scene& scene) {
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const double tau = static_cast<double>(i) * scene.dt;
    for (const auto& obs : scene.obstacles) {
      const double clearance = obs.radius + kEgoRadius;
      if ((traj.points[i] - obs.center_at(tau)).norm() <= clearance) {
        return false;
      }
    }
  }
  return true;
}

bool drivable(const Trajectory& traj, const Scene& scene) {
  for (const auto& p : traj.points) {
    if (distance_to_route(p, scene) > scene.corridor_half_width) return false;
  }
  return true;
}

double progress(const Trajectory& traj, const Scene& scene) {
  if (traj.points.empty()) return 0.0;
  const Vec2& tail = traj.points.back();
  double best = 0.0;
  for (const auto& branch : scene.route) {
    const double len = polyline_length(branch);
    if (len <= 0.0) continue;
    best = std::max(best, project_arc_length(tail, branch) / len);
  }
  return std::clamp(best, 0.0, 1.0);
}

double comfort(const Trajectory& traj, const Scene& scene) {
  const auto& p = traj.points;
  const double dt2 = scene.dt * scene.dt;
  std::vector<Vec2> accel;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    accel.push_back((1.0 / dt2) * (p[i + 1] - 2.0 * p[i] + p[i - 1]));
  }
  for (const auto& a : accel) {
    if (a.norm() > kComfortMaxAccel) return 0.0;
  }
  for (std::size_t i = 0; i + 1 < accel.size(); ++i) {
    if (((accel[i + 1] - accel[i]) * (1.0 / scene.dt)).norm() > kComfortMaxJerk) {
      return 0.0;
    }
  }
  return 1.0;
}

double ttc_score(const Trajectory& traj, const Scene& scene) {
  const auto& p = traj.points;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Vec2 vel{0.0, 0.0};
    if (p.size() >= 2) {
      const std::size_t j = (i + 1 < p.size()) ? i : i - 1;
      vel = (1.0 / scene.dt) * (p[j + 1] - p[j]);
    }
    const double t0 = static_cast<double>(i) * scene.dt;
    const int n_samples = static_cast<int>(std::lround(kTtcHorizon / kTtcSampleStep));
    for (int k = 0; k <= n_samples; ++k) {
      const double s = kTtcSampleStep * static_cast<double>(k);
      const Vec2 ego = p[i] + s * vel;
      for (const auto& obs : scene.obstacles) {
        if ((ego - obs.center_at(t0 + s)).norm() <= obs.radius + kEgoRadius) {
          return 0.0;
        }
      }
    }
  }
  return 1.0;
}

PdmScore pdm_score(const Trajectory& traj, const Scene& scene) {
  PdmScore s;
  s.nc = collision_free(traj, scene) ? 1.0 : 0.0;
  s.dac = drivable(traj, scene) ? 1.0 : 0.0;
  s.ttc = ttc_score(traj, scene);
  s.comfort = comfort(traj, scene);
  s.progress = progress(traj, scene);
  s.total = s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.comfort + 5.0 * s.progress) / 12.0;
  return s;
}

ContextTokens scene_tokens(const Scene& scene) {
  if (static_cast<int>(scene.obstacles.size()) > kMaxObstacles) {
    throw std::invalid_argument("scene_tokens: more than 3 obstacles");
  }
  if (scene.route.empty() || scene.route.front().size() < 2) {
    throw std::invalid_argument("scene_tokens: scene has no usable primary route");
  }
  ContextTokens tok;
  tok.rows.assign(ContextTokens::kMaxTokens * ContextTokens::kDim, 0.0);
  tok.valid.assign(ContextTokens::kMaxTokens, 0);
  int r = 0;
  auto emit = [&](double a, double b, double c, double d, double e, double tag) {
    double* row = tok.rows.data() + static_cast<std::size_t>(r) * ContextTokens::kDim;
    row[0] = a;
    row[1] = b;
    row[2] = c;
    row[3] = d;
    row[4] = e;
    row[5] = tag;
    tok.valid[r] = 1;
    ++r;
  };
  for (const auto& obs : scene.obstacles) {
    emit(obs.center.x, obs.center.y, obs.radius, obs.velocity.x, obs.velocity.y, 1.0);
  }
  emit(scene.ego.speed, scene.ego.heading, 0.0, 0.0, 0.0, 2.0);
  const auto route_pts =
      resample_polyline(scene.route.front(), ContextTokens::kRouteTokens);
  for (const auto& p : route_pts) {
    emit(p.x, p.y, 0.0, 0.0, 0.0, 3.0);
  }
  tok.n_valid = r;
  return tok;
}

namespace {

constexpr double kMinModeSeparation = 1.0;  // m, pairwise ADE between gt modes

// Centerline with a straight lead-in, a constant-radius turn, then a straight
// tail, sampled densely enough for segment-based distance queries.
std::vector<Vec2> turn_centerline(double lead_in, double turn_angle, double radius,
                                  double total_len) {
  std::vector<Vec2> pts;
  pts.push_back({0.0, 0.0});
  Vec2 pos{lead_in, 0.0};
  pts.push_back(pos);
  double heading = 0.0;
  const double arc_len = radius * std::abs(turn_angle);
  if (arc_len > 0.0) {
    const int n_arc = std::max(8, static_cast<int>(arc_len / 0.25));
    const double step = turn_angle / n_arc;
    for (int i = 0; i < n_arc; ++i) {
      const double mid = heading + 0.5 * step;
      const double ds = arc_len / n_arc;
      pos = pos + ds * Vec2{std::cos(mid), std::sin(mid)};
      heading += step;
      pts.push_back(pos);
    }
  }
  const double tail = total_len - lead_in - arc_len;
  if (tail > 0.0) {
    pts.push_back(pos + tail * Vec2{std::cos(heading), std::sin(heading)});
  }
  return pts;
}

Trajectory follow_centerline(const std::vector<Vec2>& line, double speed, int horizon,
                             double dt) {
  Trajectory traj;
  traj.points.reserve(static_cast<std::size_t>(horizon));
  for (int i = 0; i < horizon; ++i) {
    traj.points.push_back(point_at_arc_length(line, speed * static_cast<double>(i) * dt));
  }
  return traj;
}

double min_pairwise_ade(const std::vector<Trajectory>& modes) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < modes.size(); ++i) {
    for (std::size_t j = i + 1; j < modes.size(); ++j) {
      best = std::min(best, ade(modes[i], modes[j]));
    }
  }
  return best;
}

bool legal(const Trajectory& traj, const Scene& scene) {
  return collision_free(traj, scene) && drivable(traj, scene);
}

// A fork always carries two mirror-image turn branches; half the time a
// straight middle branch as well. The primary branch (route[0], the one the
// context tokens expose) is the turn branch with the drawn sign.
bool build_fork(Scene& scene, Rng& rng, const SceneGenConfig& cfg) {
  const double v = scene.ego.speed;
  const double reach = v * static_cast<double>(cfg.horizon - 1) * cfg.dt;
  const double lead_in = v * cfg.dt * static_cast<double>(rng.uniform_int(1, 2));
  const double theta = rng.uniform(0.25, 0.40);
  const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const bool with_middle = rng.uniform() < 0.5;
  const double radius = std::max(12.0, v * v / 3.0);
  scene.corridor_half_width = rng.uniform(2.2, 3.0);

  scene.route.push_back(turn_centerline(lead_in, sign * theta, radius, reach));
  scene.route.push_back(turn_centerline(lead_in, -sign * theta, radius, reach));
  if (with_middle) {
    scene.route.push_back({{0.0, 0.0}, {reach, 0.0}});
  }
  for (const auto& branch : scene.route) {
    scene.gt_modes.push_back(follow_centerline(branch, v, cfg.horizon, cfg.dt));
  }
  return true;
}

// Straight corridor with the first obstacle parked on the centerline at a
// waypoint time, forcing a lateral swerve. Raised-cosine swerves to either
// side are the candidate modes; a side blocked by a secondary obstacle is
// dropped.
bool build_obstacle(Scene& scene, Rng& rng, const SceneGenConfig& cfg) {
  const double v = scene.ego.speed;
  const double reach = v * static_cast<double>(cfg.horizon - 1) * cfg.dt;
  scene.corridor_half_width = rng.uniform(3.2, 4.5);
  scene.route.push_back({{0.0, 0.0}, {reach, 0.0}});

  const int n_obs = rng.uniform_int(1, 3);
  const double t_block = cfg.dt * static_cast<double>(rng.uniform_int(3, 4));
  {
    Obstacle obs;
    obs.radius = rng.uniform(0.4, 0.8);
    obs.velocity = {rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5)};
    const Vec2 at_block{v * t_block, rng.uniform(-0.3, 0.3)};
    obs.center = at_block - t_block * obs.velocity;
    scene.obstacles.push_back(obs);
  }
  for (int i = 1; i < n_obs; ++i) {
    Obstacle obs;
    obs.radius = rng.uniform(0.3, 0.6);
    obs.velocity = {rng.uniform(-1.0, 1.0), rng.uniform(-0.4, 0.4)};
    const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
    obs.center = {rng.uniform(0.4, 0.9) * reach, side * rng.uniform(1.8, 2.8)};
    scene.obstacles.push_back(obs);
  }

  const double block_x = v * t_block;
  const double half_span = 1.8 * v;
  const double amplitude = scene.obstacles.front().radius + kEgoRadius + 0.35;
  for (const double side : {1.0, -1.0}) {
    Trajectory traj;
    for (int i = 0; i < cfg.horizon; ++i) {
      const double x = v * static_cast<double>(i) * cfg.dt;
      double y = 0.0;
      if (std::abs(x - block_x) < half_span) {
        const double phase = std::numbers::pi * (x - block_x) / half_span;
        y = side * amplitude * 0.5 * (1.0 + std::cos(phase));
      }
      traj.points.push_back({x, y});
    }
    if (legal(traj, scene)) scene.gt_modes.push_back(std::move(traj));
  }
  return !scene.gt_modes.empty();
}

// Gentle constant-radius bend into a target lane; modes differ by cruise
// speed (full speed vs a slowed merge).
bool build_merge(Scene& scene, Rng& rng, const SceneGenConfig& cfg) {
  const double v = scene.ego.speed;
  const double reach = v * static_cast<double>(cfg.horizon - 1) * cfg.dt;
  const double lead_in = v * cfg.dt;
  const double bend = rng.uniform(0.15, 0.35) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
  const double radius = std::max(v * v / 3.0, rng.uniform(15.0, 40.0));
  scene.corridor_half_width = rng.uniform(2.2, 3.0);
  scene.route.push_back(turn_centerline(lead_in, bend, radius, reach));

  scene.gt_modes.push_back(follow_centerline(scene.route[0], v, cfg.horizon, cfg.dt));
  if (rng.uniform() < 0.5) {
    scene.gt_modes.push_back(
        follow_centerline(scene.route[0], 0.65 * v, cfg.horizon, cfg.dt));
  }
  return true;
}

}  // namespace

Scene gen_scene(const std::string& kind, std::uint64_t seed, const SceneGenConfig& cfg) {
  std::uint64_t kind_tag = 0;
  if (kind == "fork") {
    kind_tag = 1;
  } else if (kind == "obstacle") {
    kind_tag = 2;
  } else if (kind == "merge") {
    kind_tag = 3;
  } else {
    throw std::invalid_argument("gen_scene: unknown kind '" + kind + "'");
  }
  const std::uint64_t base = derive_seed(seed, kind_tag);

  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng(derive_seed(base, attempt));
    Scene scene;
    scene.kind = kind;
    scene.seed = seed;
    scene.dt = cfg.dt;
    scene.ego.speed = rng.uniform(3.0, 12.0);
    scene.ego.heading = 0.0;

    bool built = false;
    if (kind_tag == 1) {
      built = build_fork(scene, rng, cfg);
    } else if (kind_tag == 2) {
      built = build_obstacle(scene, rng, cfg);
    } else {
      built = build_merge(scene, rng, cfg);
    }
    if (!built) continue;

    bool ok = !scene.gt_modes.empty() && scene.gt_modes.size() <= 3;
    for (const auto& mode : scene.gt_modes) {
      ok = ok && legal(mode, scene);
    }
    if (ok && scene.gt_modes.size() > 1) {
      ok = min_pairwise_ade(scene.gt_modes) >= kMinModeSeparation;
    }
    if (ok) return scene;
  }
  throw std::runtime_error("gen_scene: no legal scene after 64 attempts (kind " + kind +
                           ")");
}

}  // namespace tdp
