#include "tdp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tdp {

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > total_steps) {
    throw std::out_of_range("beta: timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(total_steps) + "]");
  }
  return betas[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > total_steps) {
    throw std::out_of_range("alpha: timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(total_steps) + "]");
  }
  return alphas[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > total_steps) {
    throw std::out_of_range("alpha_bar: timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(total_steps) + "]");
  }
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule build_linear_schedule(int total_steps, double beta_start,
                                    double beta_end, double trunc_fraction) {
  if (total_steps < 2) {
    throw std::invalid_argument("build_linear_schedule: total_steps must be >= 2");
  }
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument(
        "build_linear_schedule: need 0 < beta_start <= beta_end < 1");
  }
  if (!(trunc_fraction > 0.0) || !(trunc_fraction <= 1.0)) {
    throw std::invalid_argument(
        "build_linear_schedule: trunc_fraction must be in (0, 1]");
  }
  if (trunc_fraction * total_steps < 1.0) {
    throw std::invalid_argument(
        "build_linear_schedule: trunc_fraction * total_steps must be >= 1");
  }

  NoiseSchedule s;
  s.total_steps = total_steps;
  s.betas.resize(total_steps);
  s.alphas.resize(total_steps);
  s.alpha_bars.resize(total_steps + 1);
  s.alpha_bars[0] = 1.0;
  for (int t = 1; t <= total_steps; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(total_steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[t - 1] = beta;
    s.alphas[t - 1] = 1.0 - beta;
    s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - beta);
  }
  const long t_trunc = std::lround(trunc_fraction * total_steps);
  s.trunc_step = static_cast<int>(std::clamp<long>(t_trunc, 1, total_steps));
  return s;
}

std::vector<double> diffuse(std::span<const double> x0, int t,
                            std::span<const double> eps,
                            const NoiseSchedule& sched) {
  if (t < 0 || t > sched.total_steps) {
    throw std::out_of_range("diffuse: timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(sched.total_steps) + "]");
  }
  if (x0.size() != eps.size()) {
    throw std::invalid_argument("diffuse: x0 and eps shapes differ");
  }
  const double abar = sched.alpha_bar(t);
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> ddim_step(std::span<const double> x_t,
                              std::span<const double> x0_hat, int t,
                              int t_next, const NoiseSchedule& sched) {
  if (t_next >= t) {
    throw std::invalid_argument("ddim_step: t_next must be < t");
  }
  if (t_next < 0 || t > sched.total_steps) {
    throw std::out_of_range("ddim_step: need 0 <= t_next < t <= T");
  }
  if (x_t.size() != x0_hat.size()) {
    throw std::invalid_argument("ddim_step: x_t and x0_hat shapes differ");
  }
  const double abar_t = sched.alpha_bar(t);
  if (!(abar_t < 1.0)) {
    throw std::invalid_argument("ddim_step: alpha_bar(t) must be < 1");
  }
  const double abar_n = sched.alpha_bar(t_next);
  const double sa_t = std::sqrt(abar_t);
  const double sb_t = std::sqrt(1.0 - abar_t);
  const double sa_n = std::sqrt(abar_n);
  const double sb_n = std::sqrt(1.0 - abar_n);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double eps_hat = (x_t[i] - sa_t * x0_hat[i]) / sb_t;
    out[i] = sa_n * x0_hat[i] + sb_n * eps_hat;
  }
  return out;
}

StepGrid make_step_grid(int start, int n_steps) {
  if (n_steps < 1) {
    throw std::invalid_argument("make_step_grid: n_steps must be >= 1");
  }
  if (start < n_steps) {
    throw std::invalid_argument("make_step_grid: start must be >= n_steps");
  }
  StepGrid grid;
  grid.steps.resize(n_steps + 1);
  for (int i = 0; i <= n_steps; ++i) {
    const double raw = static_cast<double>(start) *
                       (1.0 - static_cast<double>(i) / static_cast<double>(n_steps));
    grid.steps[i] = static_cast<int>(std::lround(raw));
  }
  grid.steps.front() = start;
  grid.steps.back() = 0;
  // rounding can produce equal neighbours; push the later entry down
  for (int i = 1; i <= n_steps; ++i) {
    if (grid.steps[i] >= grid.steps[i - 1]) {
      grid.steps[i] = grid.steps[i - 1] - 1;
    }
  }
  if (grid.steps.back() != 0) {
    throw std::logic_error("make_step_grid: grid does not end at 0");
  }
  return grid;
}

}  // namespace tdp
