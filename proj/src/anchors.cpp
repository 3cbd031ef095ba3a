#include "tdp/anchors.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace tdp {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest_centroid(const std::vector<double>& p,
                     const std::vector<std::vector<double>>& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double total_inertia(const std::vector<std::vector<double>>& points,
                     const std::vector<std::vector<double>>& centroids,
                     const std::vector<int>& assignment) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    s += squared_distance(points[i], centroids[assignment[i]]);
  }
  return s;
}

void update_means(const std::vector<std::vector<double>>& points,
                  const std::vector<int>& assignment,
                  std::vector<std::vector<double>>& centroids) {
  const std::size_t dim = points.front().size();
  std::vector<int> counts(centroids.size(), 0);
  for (auto& c : centroids) c.assign(dim, 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    counts[assignment[i]] += 1;
    auto& c = centroids[assignment[i]];
    for (std::size_t j = 0; j < dim; ++j) c[j] += points[i][j];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] > 0) {
      for (auto& v : centroids[c]) v /= counts[c];
    }
  }
}

// Exact inertia change from replacing member u of a size-m cluster with v.
double replace_delta(int m, const std::vector<double>& mu,
                     const std::vector<double>& u, const std::vector<double>& v) {
  if (m <= 1) return 0.0;
  std::vector<double> mu_minus(mu.size());
  for (std::size_t d = 0; d < mu.size(); ++d) {
    mu_minus[d] = (m * mu[d] - u[d]) / (m - 1);
  }
  return -(static_cast<double>(m) / (m - 1)) * squared_distance(u, mu) +
         (static_cast<double>(m - 1) / m) * squared_distance(v, mu_minus);
}

// Post-Lloyd polish: greedy single-point reassignments (Hartigan moves) and
// cross-cluster pair swaps, each accepted only on a strict inertia decrease.
// Lloyd fixed points are not always move-optimal, and the reverse also holds,
// so this strictly enlarges the set of escaped local minima.
void refine_partition(const std::vector<std::vector<double>>& points,
                      std::vector<int>& assignment, int k) {
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  std::vector<int> counts(k, 0);
  for (int a : assignment) counts[a] += 1;
  std::vector<std::vector<double>> mu(static_cast<std::size_t>(k));
  update_means(points, assignment, mu);

  for (int sweep = 0; sweep < 300; ++sweep) {
    bool improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int a = assignment[i];
      if (counts[a] <= 1) continue;
      const double rem = -(static_cast<double>(counts[a]) / (counts[a] - 1)) *
                         squared_distance(points[i], mu[a]);
      for (int c = 0; c < k; ++c) {
        if (c == a) continue;
        const double add = (static_cast<double>(counts[c]) / (counts[c] + 1)) *
                           squared_distance(points[i], mu[c]);
        if (rem + add < -1e-12) {
          for (std::size_t d = 0; d < dim; ++d) {
            mu[a][d] = (counts[a] * mu[a][d] - points[i][d]) / (counts[a] - 1);
            mu[c][d] = (counts[c] * mu[c][d] + points[i][d]) / (counts[c] + 1);
          }
          counts[a] -= 1;
          counts[c] += 1;
          assignment[i] = c;
          improved = true;
          break;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const int a = assignment[i];
        const int b = assignment[j];
        if (a == b) continue;
        const double delta = replace_delta(counts[a], mu[a], points[i], points[j]) +
                             replace_delta(counts[b], mu[b], points[j], points[i]);
        if (delta < -1e-12) {
          for (std::size_t d = 0; d < dim; ++d) {
            mu[a][d] += (points[j][d] - points[i][d]) / counts[a];
            mu[b][d] += (points[i][d] - points[j][d]) / counts[b];
          }
          assignment[i] = b;
          assignment[j] = a;
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
}

std::vector<std::vector<double>> random_subset_seed(
    const std::vector<std::vector<double>>& points, int k, Rng& rng) {
  std::vector<int> pool(points.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  for (int i = 0; i < k; ++i) {
    const int j = rng.uniform_int(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[j]);
    centroids.push_back(points[pool[i]]);
  }
  return centroids;
}

double partition_inertia(const std::vector<std::vector<double>>& points,
                         const std::vector<int>& assignment, int k,
                         std::vector<std::vector<double>>& means_out) {
  means_out.assign(static_cast<std::size_t>(k), {});
  update_means(points, assignment, means_out);
  return total_inertia(points, means_out, assignment);
}

}  // namespace

LloydResult lloyd(const std::vector<std::vector<double>>& points,
                  std::vector<std::vector<double>> centroids, int max_iters) {
  if (points.empty() || centroids.empty() || max_iters < 1) {
    throw std::invalid_argument("lloyd: need points, centroids and max_iters >= 1");
  }
  LloydResult res;
  res.assignment.assign(points.size(), -1);
  const int k = static_cast<int>(centroids.size());

  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<int> assign(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      assign[i] = nearest_centroid(points[i], centroids);
    }

    // re-seed empty clusters with the globally worst-fit point
    std::vector<int> counts(k, 0);
    for (int a : assign) counts[a] += 1;
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t worst = 0;
      double worst_d = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (counts[assign[i]] <= 1) continue;  // keep other clusters non-empty
        const double d = squared_distance(points[i], centroids[assign[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst_d >= 0.0) {
        counts[assign[worst]] -= 1;
        assign[worst] = c;
        counts[c] = 1;
      }
    }

    const bool converged = (assign == res.assignment);
    res.assignment = std::move(assign);
    update_means(points, res.assignment, centroids);
    res.inertia_trace.push_back(total_inertia(points, centroids, res.assignment));
    if (converged) break;
  }

  res.centroids = std::move(centroids);
  res.inertia = res.inertia_trace.back();
  return res;
}

std::vector<std::vector<double>> farthest_point_seed(
    const std::vector<std::vector<double>>& points, int k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.uniform_int(0, static_cast<int>(points.size()) - 1)]);
  while (static_cast<int>(centroids.size()) < k) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) {
        nearest = std::min(nearest, squared_distance(points[i], c));
      }
      if (nearest > best_d) {
        best_d = nearest;
        best = i;
      }
    }
    centroids.push_back(points[best]);
  }
  return centroids;
}

AnchorSet kmeans_anchors(const std::vector<Trajectory>& corpus, int k,
                         int n_restarts, int max_iters, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("kmeans_anchors: k must be >= 1");
  if (n_restarts < 1 || max_iters < 1) {
    throw std::invalid_argument("kmeans_anchors: restarts and iters must be >= 1");
  }
  if (corpus.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kmeans_anchors: corpus size " +
                                std::to_string(corpus.size()) +
                                " is smaller than k = " + std::to_string(k));
  }
  const std::size_t horizon = corpus.front().horizon();
  std::vector<std::vector<double>> points;
  points.reserve(corpus.size());
  for (const auto& t : corpus) {
    if (t.horizon() != horizon) {
      throw std::invalid_argument("kmeans_anchors: trajectory horizons differ");
    }
    points.push_back(t.flatten());
  }

  double best_inertia = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_means;
  const int n = static_cast<int>(points.size());
  for (int r = 0; r < n_restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto init = (r % 2 == 0) ? farthest_point_seed(points, k, rng)
                             : random_subset_seed(points, k, rng);
    LloydResult res = lloyd(points, std::move(init), max_iters);
    refine_partition(points, res.assignment, k);
    std::vector<std::vector<double>> means;
    double inertia = partition_inertia(points, res.assignment, k, means);

    // a few perturb-and-repolish kicks to hop out of paired local minima
    for (int kick = 0; kick < 4; ++kick) {
      std::vector<int> trial = res.assignment;
      for (int m = 0; m < 2; ++m) {
        trial[rng.uniform_int(0, n - 1)] = rng.uniform_int(0, k - 1);
      }
      std::vector<int> counts(k, 0);
      for (int a : trial) counts[a] += 1;
      if (std::find(counts.begin(), counts.end(), 0) != counts.end()) continue;
      refine_partition(points, trial, k);
      std::vector<std::vector<double>> trial_means;
      const double trial_inertia = partition_inertia(points, trial, k, trial_means);
      if (trial_inertia < inertia) {
        inertia = trial_inertia;
        res.assignment = std::move(trial);
        means = std::move(trial_means);
      }
    }

    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_means = std::move(means);
    }
  }

  AnchorSet out;
  out.inertia = best_inertia;
  out.anchors.reserve(k);
  for (const auto& c : best_means) {
    out.anchors.push_back(Trajectory::from_flat(c));
  }
  return out;
}

std::size_t nearest_anchor(const Trajectory& traj, const AnchorSet& anchors) {
  if (anchors.anchors.empty()) {
    throw std::invalid_argument("nearest_anchor: empty anchor set");
  }
  const auto flat = traj.flatten();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < anchors.anchors.size(); ++i) {
    if (anchors.anchors[i].horizon() != traj.horizon()) {
      throw std::invalid_argument("nearest_anchor: horizon mismatch");
    }
    const double d = squared_distance(flat, anchors.anchors[i].flatten());
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<double> anchored_sample_with_eps(const Trajectory& anchor,
                                             const NoiseSchedule& sched, int t,
                                             std::span<const double> eps) {
  if (t < 1 || t > sched.trunc_step) {
    throw std::out_of_range("anchored_sample: timestep " + std::to_string(t) +
                            " outside truncated range [1, " +
                            std::to_string(sched.trunc_step) + "]");
  }
  return diffuse(anchor.flatten(), t, eps, sched);
}

std::vector<double> anchored_sample(const Trajectory& anchor,
                                    const NoiseSchedule& sched, int t,
                                    Rng& rng) {
  std::vector<double> eps = rng.normal_vec(anchor.horizon() * 2);
  return anchored_sample_with_eps(anchor, sched, t, eps);
}

}  // namespace tdp
