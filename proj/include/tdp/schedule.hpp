#pragma once

#include <span>
#include <vector>

namespace tdp {

/// Diffusion coefficient tables plus the truncation index. Immutable after
/// construction; timesteps are 1-based for beta/alpha and 0-based for
/// alpha_bar, where t = 0 is the clean state (alpha_bar(0) == 1).
struct NoiseSchedule {
  int total_steps = 0;             // T
  std::vector<double> betas;       // betas[t-1] holds beta_t, t in 1..T
  std::vector<double> alphas;      // alphas[t-1] = 1 - beta_t
  std::vector<double> alpha_bars;  // alpha_bars[t], t in 0..T
  int trunc_step = 0;              // t_trunc in [1, T]

  double beta(int t) const;       // t in 1..T
  double alpha(int t) const;      // t in 1..T
  double alpha_bar(int t) const;  // t in 0..T
};

/// Linear beta schedule with the given truncation fraction.
/// t_trunc = round(trunc_fraction * T), clamped to [1, T].
NoiseSchedule build_linear_schedule(int total_steps, double beta_start,
                                    double beta_end, double trunc_fraction);

/// Forward diffusion: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
std::vector<double> diffuse(std::span<const double> x0, int t,
                            std::span<const double> eps,
                            const NoiseSchedule& sched);

/// Deterministic (eta = 0) reverse update from t to t_next < t, given the
/// model's clean-state estimate x0_hat. Recovers the implied noise direction
/// and re-diffuses x0_hat to t_next along it.
std::vector<double> ddim_step(std::span<const double> x_t,
                              std::span<const double> x0_hat, int t,
                              int t_next, const NoiseSchedule& sched);

/// Strictly decreasing timestep grid from `start` down to 0 inclusive.
struct StepGrid {
  std::vector<int> steps;
};

/// n_steps + 1 entries, evenly spaced from start to 0 after integer rounding;
/// rounding ties are resolved by decrementing so the grid stays strictly
/// decreasing.
StepGrid make_step_grid(int start, int n_steps);

}  // namespace tdp
