#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "tdp/policy.hpp"
#include "tdp/svg.hpp"
#include "tdp/world.hpp"

using namespace tdp;

namespace {

std::size_t count_of(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t at = haystack.find(needle); at != std::string::npos;
       at = haystack.find(needle, at + needle.size())) {
    ++n;
  }
  return n;
}

PlanResult fake_result(int k) {
  PlanResult r;
  for (int i = 0; i < k; ++i) {
    Trajectory t;
    for (int j = 1; j <= 8; ++j) {
      t.points.push_back({1.0 * j, 0.3 * i * j});
    }
    r.candidates.push_back(t);
    r.scores.push_back(0.1 + 0.8 * i / std::max(1, k - 1));
  }
  r.chosen = k - 1;
  return r;
}

}  // namespace

TEST_CASE("svg structure and candidate count") {
  SceneGenConfig gcfg;
  const Scene scene = gen_scene("obstacle", 5, gcfg);
  const PlanResult result = fake_result(6);
  const std::string svg = render_scene_svg(scene, &result);

  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(count_of(svg, "class=\"candidate\"") == 6);
  CHECK(count_of(svg, "class=\"chosen\"") == 1);
  CHECK(count_of(svg, "class=\"gt\"") == scene.gt_modes.size());
  CHECK(count_of(svg, "class=\"obstacle\"") == scene.obstacles.size());
  CHECK(count_of(svg, "class=\"route\"") == scene.route.size());

  // crude well-formedness: every tag closes, no stray ampersands
  CHECK(count_of(svg, "<") == count_of(svg, ">"));
  CHECK(count_of(svg, "<polyline") + count_of(svg, "<circle") +
            count_of(svg, "<rect") ==
        count_of(svg, "/>"));
  CHECK(svg.find('&') == std::string::npos);
}

TEST_CASE("svg bytes are deterministic and scene-only mode works") {
  SceneGenConfig gcfg;
  const Scene scene = gen_scene("fork", 9, gcfg);
  const PlanResult result = fake_result(4);
  CHECK(render_scene_svg(scene, &result) == render_scene_svg(scene, &result));

  const std::string bare = render_scene_svg(scene, nullptr);
  CHECK(bare.rfind("<svg", 0) == 0);
  CHECK(count_of(bare, "class=\"candidate\"") == 0);
  CHECK(count_of(bare, "class=\"gt\"") == scene.gt_modes.size());
}

TEST_CASE("candidate opacity follows the score") {
  SceneGenConfig gcfg;
  const Scene scene = gen_scene("merge", 11, gcfg);
  PlanResult r = fake_result(2);
  r.scores = {0.25, 0.75};
  const std::string svg = render_scene_svg(scene, &r);
  CHECK(svg.find("stroke-opacity=\"0.25\"") != std::string::npos);
  CHECK(svg.find("stroke-opacity=\"0.75\"") != std::string::npos);
}
