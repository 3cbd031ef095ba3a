#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace tdp {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Vec2& o) const = default;
  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// A planned path: H waypoints in the ego frame at plan time, waypoint i at
/// time i*dt. All numeric machinery works on the flattened [x0,y0,x1,y1,...]
/// layout; this type is the geometric view.
struct Trajectory {
  std::vector<Vec2> points;

  Trajectory() = default;
  explicit Trajectory(std::vector<Vec2> pts) : points(std::move(pts)) {}

  std::size_t horizon() const { return points.size(); }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(points.size() * 2);
    for (const auto& p : points) {
      out.push_back(p.x);
      out.push_back(p.y);
    }
    return out;
  }

  static Trajectory from_flat(std::span<const double> flat) {
    if (flat.size() % 2 != 0) {
      throw std::invalid_argument("flat trajectory vector must have even length");
    }
    Trajectory t;
    t.points.reserve(flat.size() / 2);
    for (std::size_t i = 0; i + 1 < flat.size(); i += 2) {
      t.points.push_back({flat[i], flat[i + 1]});
    }
    return t;
  }
};

/// Average displacement error: mean pointwise Euclidean distance.
inline double ade(const Trajectory& a, const Trajectory& b) {
  if (a.horizon() != b.horizon()) {
    throw std::invalid_argument("ade: trajectory horizons differ");
  }
  if (a.points.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    sum += (a.points[i] - b.points[i]).norm();
  }
  return sum / static_cast<double>(a.points.size());
}

}  // namespace tdp
