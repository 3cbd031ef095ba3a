#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tdp/anchors.hpp"
#include "tdp/denoiser.hpp"
#include "tdp/rng.hpp"
#include "tdp/schedule.hpp"
#include "tdp/trajectory.hpp"
#include "tdp/world.hpp"

namespace tdp {

/// Where training-time noisy samples start from: the anchor set (default)
/// or the ground-truth trajectory itself.
enum class DiffuseSource { kAnchor, kGt };

struct TrainConfig {
  int epochs = 120;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_rec = 1.0;
  double lambda_cls = 1.0;
  bool deep_supervision = true;
  DiffuseSource diffuse_source = DiffuseSource::kAnchor;
  std::uint64_t seed = 42;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long step = 0;
};

struct LossBreakdown {
  double rec = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

struct PlanResult {
  std::vector<Trajectory> candidates;  // one per anchor / sample, in order
  std::vector<double> scores;          // sigmoid of final-stage logits
  int chosen = 0;                      // argmax score, ties to lowest index
};

/// Frozen per-step randomness: the sampled timestep and one noise vector per
/// forward sample. Splitting the draws from the loss keeps the loss a pure
/// function of the parameters, which the finite-difference checks need.
struct StepDraws {
  int t = 1;
  std::vector<std::vector<double>> eps;
};

double sigmoid(double x);
double bce_with_logits(double logit, double label);

/// In-place Adam with bias correction. State tensors are sized lazily on
/// first use.
void adam_update(std::vector<double>& params, const std::vector<double>& grad,
                 AdamState& state, const TrainConfig& cfg);

/// Sample t ~ Uniform{1..max_t}, then n_samples noise vectors of length 2H,
/// in that order.
StepDraws draw_step(int max_t, int n_samples, int horizon, Rng& rng);

/// Loss (and, when grad_out != nullptr, its parameter gradient) of one
/// truncated training step: one anchored sample per anchor at the drawn t,
/// L1 reconstruction on the anchor nearest to gt across the supervised
/// stages, BCE over the final-stage logits with that anchor positive.
LossBreakdown truncated_loss_and_grad(const DenoiserParams& params,
                                      const ContextTokens& ctx,
                                      const Trajectory& gt,
                                      const AnchorSet& anchors,
                                      const NoiseSchedule& sched,
                                      const TrainConfig& cfg,
                                      const StepDraws& draws,
                                      std::vector<double>* grad_out);

/// Baseline step: a single sample diffused from gt_modes[gt_index] at the
/// drawn t; reconstruction toward that mode; the score label is 1 iff the
/// noisy sample is still nearest (by ADE) to its source mode.
LossBreakdown vanilla_loss_and_grad(const DenoiserParams& params,
                                    const ContextTokens& ctx,
                                    const std::vector<Trajectory>& gt_modes,
                                    int gt_index, const NoiseSchedule& sched,
                                    const TrainConfig& cfg,
                                    const StepDraws& draws,
                                    std::vector<double>* grad_out);

/// Draw + loss + gradient + Adam update, in place. `gt` must be one of the
/// scene's gt_modes.
LossBreakdown training_step(DenoiserParams& params, AdamState& opt,
                            const Scene& scene, const Trajectory& gt,
                            const AnchorSet& anchors, const NoiseSchedule& sched,
                            const TrainConfig& cfg, Rng& rng);

LossBreakdown vanilla_training_step(DenoiserParams& params, AdamState& opt,
                                    const Scene& scene, int gt_index,
                                    const NoiseSchedule& sched,
                                    const TrainConfig& cfg, Rng& rng);

/// Single-sample denoiser evaluation hook: returns the final-stage output at
/// (x_t, t). Lets tests swap in a perfect denoiser.
using DenoiseFn =
    std::function<StageOutput(std::span<const double> x_t, int t)>;

/// Wraps the cascade into a DenoiseFn bound to one scene's tokens.
DenoiseFn make_denoise_fn(const DenoiserParams& params, ContextTokens tokens);

/// Anchored inference: for each anchor, start from an anchored sample at
/// t_trunc and walk a make_step_grid(t_trunc, n_steps) DDIM descent. The
/// score is the sigmoid of the logit from the last evaluation. Never
/// evaluates a timestep above t_trunc.
PlanResult plan_with(const DenoiseFn& fn, const AnchorSet& anchors,
                     const NoiseSchedule& sched, int n_steps, Rng& rng);

PlanResult plan(const DenoiserParams& params, const Scene& scene,
                const AnchorSet& anchors, const NoiseSchedule& sched,
                int n_steps, Rng& rng);

/// Baseline inference: k_samples standard-normal starts at t = T and a grid
/// from T. Identical scoring and selection.
PlanResult vanilla_plan_with(const DenoiseFn& fn, int k_samples, int horizon,
                             const NoiseSchedule& sched, int n_steps, Rng& rng);

PlanResult vanilla_plan(const DenoiserParams& params, const Scene& scene,
                        const NoiseSchedule& sched, int n_steps, int k_samples,
                        Rng& rng);

const Trajectory& select(const PlanResult& result);

/// Pools every gt mode of every scene and clusters them.
AnchorSet fit_anchors(const std::vector<Scene>& scenes, int k, int n_restarts,
                      int max_iters, std::uint64_t seed);

enum class PolicyKind { kTruncated, kVanilla };

struct TrainedPolicy {
  PolicyKind kind = PolicyKind::kTruncated;
  DenoiserParams params;
  AnchorSet anchors;  // empty for the vanilla baseline
  std::vector<LossBreakdown> epoch_losses;
};

/// Full training loop: per epoch, visit all scenes in a seeded shuffled
/// order, one gt mode sampled uniformly per visit, gradients averaged over
/// `batch_size` consecutive scenes per Adam update. `anchors` is required
/// for the truncated policy and ignored for the vanilla baseline.
TrainedPolicy train_policy(
    PolicyKind kind, const std::vector<Scene>& scenes, const AnchorSet* anchors,
    const NoiseSchedule& sched, const CascadeConfig& ccfg, const TrainConfig& cfg,
    const std::function<void(int, const LossBreakdown&)>& on_epoch = {});

}  // namespace tdp
