#include "tdp/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <string>

namespace tdp {
namespace {

constexpr double kScale = 20.0;  // px per meter
constexpr double kMargin = 2.0;  // meters around the content box

struct Box {
  double min_x = 0.0, max_x = 1.0, min_y = -1.0, max_y = 1.0;
  bool first = true;

  void add(const Vec2& p, double pad = 0.0) {
    if (first) {
      min_x = p.x - pad;
      max_x = p.x + pad;
      min_y = p.y - pad;
      max_y = p.y + pad;
      first = false;
      return;
    }
    min_x = std::min(min_x, p.x - pad);
    max_x = std::max(max_x, p.x + pad);
    min_y = std::min(min_y, p.y - pad);
    max_y = std::max(max_y, p.y + pad);
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

class SvgWriter {
 public:
  SvgWriter(const Box& box) : box_(box) {}

  double px(double x) const { return (x - box_.min_x + kMargin) * kScale; }
  double py(double y) const { return (box_.max_y - y + kMargin) * kScale; }
  double width() const { return (box_.max_x - box_.min_x + 2 * kMargin) * kScale; }
  double height() const { return (box_.max_y - box_.min_y + 2 * kMargin) * kScale; }

  void open() {
    out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width()) +
            "\" height=\"" + num(height()) + "\" viewBox=\"0 0 " + num(width()) +
            " " + num(height()) + "\">\n";
    out_ += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  }

  void polyline(const std::vector<Vec2>& pts, const std::string& cls,
                const std::string& style) {
    if (pts.empty()) return;
    out_ += "<polyline class=\"" + cls + "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i > 0) out_ += " ";
      out_ += num(px(pts[i].x)) + "," + num(py(pts[i].y));
    }
    out_ += "\" fill=\"none\" " + style + "/>\n";
  }

  void circle(const Vec2& c, double r, const std::string& cls,
              const std::string& style) {
    out_ += "<circle class=\"" + cls + "\" cx=\"" + num(px(c.x)) + "\" cy=\"" +
            num(py(c.y)) + "\" r=\"" + num(r * kScale) + "\" " + style + "/>\n";
  }

  std::string close() {
    out_ += "</svg>\n";
    return out_;
  }

 private:
  Box box_;
  std::string out_;
};

}  // namespace

std::string render_scene_svg(const Scene& scene, const PlanResult* result) {
  Box box;
  for (const auto& branch : scene.route) {
    for (const auto& p : branch) box.add(p, scene.corridor_half_width);
  }
  for (const auto& o : scene.obstacles) box.add(o.center, o.radius);
  for (const auto& m : scene.gt_modes) {
    for (const auto& p : m.points) box.add(p);
  }
  if (result) {
    for (const auto& c : result->candidates) {
      for (const auto& p : c.points) box.add(p);
    }
  }
  box.add({0.0, 0.0});

  SvgWriter w(box);
  w.open();
  for (const auto& branch : scene.route) {
    w.polyline(branch, "route",
               "stroke=\"#d9d9d9\" stroke-width=\"" +
                   num(2.0 * scene.corridor_half_width * kScale) +
                   "\" stroke-linecap=\"round\" stroke-linejoin=\"round\"");
  }
  for (const auto& branch : scene.route) {
    w.polyline(branch, "centerline",
               "stroke=\"#bbbbbb\" stroke-width=\"1\" stroke-dasharray=\"6 4\"");
  }
  for (const auto& o : scene.obstacles) {
    w.circle(o.center, o.radius, "obstacle",
             "fill=\"#c0392b\" fill-opacity=\"0.65\"");
  }
  for (const auto& m : scene.gt_modes) {
    w.polyline(m.points, "gt",
               "stroke=\"#2c7a2c\" stroke-width=\"2\" stroke-dasharray=\"5 5\"");
  }
  if (result) {
    for (std::size_t i = 0; i < result->candidates.size(); ++i) {
      w.polyline(result->candidates[i].points, "candidate",
                 "stroke=\"#1f5fbf\" stroke-width=\"2\" stroke-opacity=\"" +
                     num(result->scores[i]) + "\"");
    }
    if (!result->candidates.empty()) {
      const auto& chosen =
          result->candidates[static_cast<std::size_t>(result->chosen)];
      w.polyline(chosen.points, "chosen",
                 "stroke=\"#0b2e6b\" stroke-width=\"4\"");
    }
  }
  w.circle({0.0, 0.0}, 0.4, "ego", "fill=\"#111111\"");
  return w.close();
}

}  // namespace tdp
