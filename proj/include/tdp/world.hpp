#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tdp/trajectory.hpp"

namespace tdp {

/// Disk obstacle under a constant-velocity motion model.
struct Obstacle {
  Vec2 center;
  double radius = 1.0;
  Vec2 velocity;

  Vec2 center_at(double tau) const { return center + tau * velocity; }
};

struct EgoState {
  double speed = 0.0;    // m/s
  double heading = 0.0;  // radians, 0 = +x (ego frame at plan time)
};

/// Synthetic driving world. `route` holds one centerline polyline per
/// corridor branch; route[0] is the primary branch. Waypoint i of any
/// trajectory scored against this scene is at time i * dt.
struct Scene {
  std::string kind;  // fork | obstacle | merge
  std::uint64_t seed = 0;
  EgoState ego;
  std::vector<Obstacle> obstacles;
  std::vector<std::vector<Vec2>> route;
  double corridor_half_width = 0.0;
  std::vector<Trajectory> gt_modes;  // 1..3 distinct legal maneuvers
  double dt = 0.5;
};

/// Gate-then-weight planning score. total =
/// nc * dac * (5*ttc + 2*comfort + 5*progress) / 12.
struct PdmScore {
  double nc = 0.0;
  double dac = 0.0;
  double ttc = 0.0;
  double comfort = 0.0;
  double progress = 0.0;
  double total = 0.0;
};

inline constexpr double kEgoRadius = 1.0;          // m, disk footprint
inline constexpr double kComfortMaxAccel = 4.0;    // m/s^2
inline constexpr double kComfortMaxJerk = 8.0;     // m/s^3
inline constexpr double kTtcHorizon = 2.0;         // s
inline constexpr double kTtcSampleStep = 0.1;      // s
inline constexpr int kMaxObstacles = 3;

struct SceneGenConfig {
  int horizon = 8;
  double dt = 0.5;
};

/// Deterministic procedural scene for (kind, seed). Ground-truth modes are
/// guaranteed collision-free and inside the corridor (rejection loop).
Scene gen_scene(const std::string& kind, std::uint64_t seed,
                const SceneGenConfig& cfg = {});

/// NC sub-score as a boolean: every waypoint clears every obstacle disk
/// (obstacle advanced to the waypoint's time) by more than the ego radius.
bool collision_free(const Trajectory& traj, const Scene& scene);

/// DAC sub-score as a boolean: every waypoint within the corridor half-width
/// of some route branch.
bool drivable(const Trajectory& traj, const Scene& scene);

/// EP sub-score: normalized arc-length of the final waypoint's projection
/// onto the route (best branch), clipped to [0, 1].
double progress(const Trajectory& traj, const Scene& scene);

/// 1 if finite-difference accelerations and jerks stay within bounds
/// (boundary inclusive), else 0.
double comfort(const Trajectory& traj, const Scene& scene);

/// 1 if coasting from every waypoint at its finite-difference velocity for
/// 2 s (0.1 s sampling) hits no obstacle disk, else 0.
double ttc_score(const Trajectory& traj, const Scene& scene);

PdmScore pdm_score(const Trajectory& traj, const Scene& scene);

/// Fixed-shape conditioning tokens: one row per obstacle, one ego row, eight
/// route rows, zero-padded to kMaxTokens with a validity mask. Row layout is
/// [a, b, c, d, e, tag] with tag 1 = obstacle, 2 = ego, 3 = route.
struct ContextTokens {
  static constexpr int kMaxTokens = 12;
  static constexpr int kDim = 6;
  static constexpr int kRouteTokens = 8;

  std::vector<double> rows;     // kMaxTokens * kDim, row-major
  std::vector<std::uint8_t> valid;  // kMaxTokens
  int n_valid = 0;

  std::span<const double> row(int i) const {
    return {rows.data() + static_cast<std::size_t>(i) * kDim, kDim};
  }
};

ContextTokens scene_tokens(const Scene& scene);

// -- geometry helpers (shared with the scorer oracles) --

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);
double polyline_length(std::span<const Vec2> pts);

/// n points uniformly spaced by arc length, endpoints included.
std::vector<Vec2> resample_polyline(std::span<const Vec2> pts, int n);

/// Minimum distance from p to any segment of any branch.
double distance_to_route(const Vec2& p, const Scene& scene);

/// Arc-length coordinate of the projection of p onto the polyline.
double project_arc_length(const Vec2& p, std::span<const Vec2> pts);

/// Position at arc length s along the polyline (clamped to the ends).
Vec2 point_at_arc_length(std::span<const Vec2> pts, double s);

}  // namespace tdp
