#pragma once

#include <string>

#include "tdp/policy.hpp"
#include "tdp/world.hpp"

namespace tdp {

/// Standalone SVG of one scene: corridor branches, obstacles, dashed gt
/// modes, and (when given) the plan's candidates with stroke opacity equal
/// to their score and the chosen one overlaid bold. Deterministic bytes for
/// fixed inputs.
std::string render_scene_svg(const Scene& scene, const PlanResult* result);

}  // namespace tdp
