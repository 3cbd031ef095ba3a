#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tdp/rng.hpp"
#include "tdp/schedule.hpp"
#include "tdp/trajectory.hpp"

namespace tdp {

/// K prior trajectories (k-means centroids of a corpus) plus the final
/// within-cluster sum of squared distances.
struct AnchorSet {
  std::vector<Trajectory> anchors;
  double inertia = 0.0;

  std::size_t k() const { return anchors.size(); }
};

/// One Lloyd run from the given initial centroids. `inertia_trace` holds the
/// objective after each iteration's mean update.
struct LloydResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;
  std::vector<double> inertia_trace;
  double inertia = 0.0;
};

LloydResult lloyd(const std::vector<std::vector<double>>& points,
                  std::vector<std::vector<double>> centroids, int max_iters);

/// Farthest-point seeding: first centroid drawn from the corpus, each
/// subsequent one the point with maximal distance to its nearest chosen
/// centroid (ties to the lowest index).
std::vector<std::vector<double>> farthest_point_seed(
    const std::vector<std::vector<double>>& points, int k, Rng& rng);

/// Cluster the flattened corpus with `n_restarts` seeded runs and keep the
/// best restart by inertia (ties to the lowest restart index). Each restart
/// is Lloyd to convergence followed by a local-search polish (single-point
/// moves, pair swaps, and a few perturb-and-repolish kicks), which is what
/// lets small instances reliably reach the global optimum.
AnchorSet kmeans_anchors(const std::vector<Trajectory>& corpus, int k,
                         int n_restarts, int max_iters, std::uint64_t seed);

/// Index of the anchor closest to `traj` in flattened squared Euclidean
/// distance; ties break to the lowest index.
std::size_t nearest_anchor(const Trajectory& traj, const AnchorSet& anchors);

/// Draw x_t ~ N(sqrt(abar_t) * anchor, (1 - abar_t) * I). Only valid within
/// the truncated range 1 <= t <= t_trunc.
std::vector<double> anchored_sample(const Trajectory& anchor,
                                    const NoiseSchedule& sched, int t,
                                    Rng& rng);

/// Deterministic core of anchored_sample with the noise supplied explicitly.
std::vector<double> anchored_sample_with_eps(const Trajectory& anchor,
                                             const NoiseSchedule& sched, int t,
                                             std::span<const double> eps);

}  // namespace tdp
