#include "tdp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace tdp {
namespace {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("train config: counts must be positive");
  }
  if (cfg.learning_rate <= 0.0 || cfg.adam_eps <= 0.0) {
    throw std::invalid_argument("train config: rates must be positive");
  }
  if (cfg.beta1 <= 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 <= 0.0 || cfg.beta2 >= 1.0) {
    throw std::invalid_argument("train config: adam betas must lie in (0, 1)");
  }
  if (cfg.lambda_rec < 0.0 || cfg.lambda_cls < 0.0) {
    throw std::invalid_argument("train config: loss weights must be non-negative");
  }
}

std::vector<int> supervised_stages(const CascadeConfig& ccfg, bool deep) {
  std::vector<int> stages;
  if (deep) {
    for (int m = 0; m < ccfg.stages; ++m) stages.push_back(m);
  } else {
    stages.push_back(ccfg.stages - 1);
  }
  return stages;
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Accumulates rec loss and, when wanted, the upstream partials for one
// positive sample's supervised stages.
double rec_loss_and_upstream(const ForwardTrace& trace,
                             const std::vector<double>& gt_flat,
                             const std::vector<int>& stages, double lambda_rec,
                             std::vector<StageUpstream>* upstream) {
  const double n_sup = static_cast<double>(stages.size());
  const double n_elem = static_cast<double>(gt_flat.size());
  double rec = 0.0;
  for (const int m : stages) {
    const auto& x0 = trace.stages[m].out.x0_hat;
    double mae = 0.0;
    for (std::size_t i = 0; i < gt_flat.size(); ++i) {
      mae += std::abs(x0[i] - gt_flat[i]);
    }
    rec += mae / n_elem;
    if (upstream) {
      auto& d = (*upstream)[m].d_x0_hat;
      d.assign(gt_flat.size(), 0.0);
      for (std::size_t i = 0; i < gt_flat.size(); ++i) {
        d[i] = lambda_rec * sign0(x0[i] - gt_flat[i]) / (n_sup * n_elem);
      }
    }
  }
  return rec / n_sup;
}

void fisher_yates(std::vector<int>& order, Rng& rng) {
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[i], order[j]);
  }
}

PlanResult run_denoise_loop(const DenoiseFn& fn,
                            std::vector<std::vector<double>> starts,
                            const StepGrid& grid, const NoiseSchedule& sched) {
  PlanResult result;
  result.candidates.reserve(starts.size());
  result.scores.reserve(starts.size());
  for (auto& x : starts) {
    double last_logit = 0.0;
    for (std::size_t i = 0; i + 1 < grid.steps.size(); ++i) {
      const int t = grid.steps[i];
      const int t_next = grid.steps[i + 1];
      const StageOutput out = fn(x, t);
      last_logit = out.score_logit;
      x = ddim_step(x, out.x0_hat, t, t_next, sched);
    }
    result.candidates.push_back(Trajectory::from_flat(x));
    result.scores.push_back(sigmoid(last_logit));
  }
  result.chosen = 0;
  for (std::size_t i = 1; i < result.scores.size(); ++i) {
    if (result.scores[i] > result.scores[result.chosen]) {
      result.chosen = static_cast<int>(i);
    }
  }
  return result;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_with_logits(double logit, double label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

void adam_update(std::vector<double>& params, const std::vector<double>& grad,
                 AdamState& state, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam: gradient length mismatch");
  }
  if (state.m.empty()) state.m.assign(params.size(), 0.0);
  if (state.v.empty()) state.v.assign(params.size(), 0.0);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam: state length mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

StepDraws draw_step(int max_t, int n_samples, int horizon, Rng& rng) {
  if (max_t < 1 || n_samples < 1 || horizon < 1) {
    throw std::invalid_argument("draw_step: counts must be positive");
  }
  StepDraws draws;
  draws.t = rng.uniform_int(1, max_t);
  draws.eps.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    draws.eps.push_back(rng.normal_vec(2 * horizon));
  }
  return draws;
}

LossBreakdown truncated_loss_and_grad(const DenoiserParams& params,
                                      const ContextTokens& ctx,
                                      const Trajectory& gt,
                                      const AnchorSet& anchors,
                                      const NoiseSchedule& sched,
                                      const TrainConfig& cfg,
                                      const StepDraws& draws,
                                      std::vector<double>* grad_out) {
  validate_train_config(cfg);
  const std::size_t k = anchors.k();
  if (k == 0) throw std::invalid_argument("training: anchor set is empty");
  if (draws.eps.size() != k) {
    throw std::invalid_argument("training: need one noise vector per anchor");
  }
  if (draws.t < 1 || draws.t > sched.trunc_step) {
    throw std::invalid_argument("training: t outside the truncated range");
  }
  const auto stages = supervised_stages(params.cfg, cfg.deep_supervision);
  const std::size_t p = nearest_anchor(gt, anchors);
  const std::vector<double> gt_flat = gt.flatten();

  if (grad_out) grad_out->assign(params.values.size(), 0.0);
  LossBreakdown loss;
  for (std::size_t i = 0; i < k; ++i) {
    const Trajectory& source =
        cfg.diffuse_source == DiffuseSource::kAnchor ? anchors.anchors[i] : gt;
    const std::vector<double> x_t =
        anchored_sample_with_eps(source, sched, draws.t, draws.eps[i]);
    const ForwardTrace trace = forward_trace(params, x_t, draws.t, ctx);

    const double logit = trace.stages.back().out.score_logit;
    const double label = i == p ? 1.0 : 0.0;
    loss.cls += bce_with_logits(logit, label) / static_cast<double>(k);

    std::vector<StageUpstream> upstream(trace.stages.size());
    upstream.back().d_score_logit =
        cfg.lambda_cls * (sigmoid(logit) - label) / static_cast<double>(k);
    if (i == p) {
      loss.rec += rec_loss_and_upstream(trace, gt_flat, stages, cfg.lambda_rec,
                                        grad_out ? &upstream : nullptr);
    }
    if (grad_out) {
      const std::vector<double> g = backward_from_trace(params, trace, upstream);
      for (std::size_t j = 0; j < g.size(); ++j) (*grad_out)[j] += g[j];
    }
  }
  loss.total = cfg.lambda_rec * loss.rec + cfg.lambda_cls * loss.cls;
  return loss;
}

LossBreakdown vanilla_loss_and_grad(const DenoiserParams& params,
                                    const ContextTokens& ctx,
                                    const std::vector<Trajectory>& gt_modes,
                                    int gt_index, const NoiseSchedule& sched,
                                    const TrainConfig& cfg,
                                    const StepDraws& draws,
                                    std::vector<double>* grad_out) {
  validate_train_config(cfg);
  if (gt_modes.empty() || gt_index < 0 ||
      gt_index >= static_cast<int>(gt_modes.size())) {
    throw std::invalid_argument("training: gt mode index out of range");
  }
  if (draws.eps.size() != 1) {
    throw std::invalid_argument("training: baseline uses a single sample");
  }
  if (draws.t < 1 || draws.t > sched.total_steps) {
    throw std::invalid_argument("training: t outside the schedule");
  }
  const auto stages = supervised_stages(params.cfg, cfg.deep_supervision);
  const Trajectory& gt = gt_modes[static_cast<std::size_t>(gt_index)];
  const std::vector<double> gt_flat = gt.flatten();

  const std::vector<double> x_t = diffuse(gt_flat, draws.t, draws.eps[0], sched);
  const Trajectory noisy = Trajectory::from_flat(x_t);
  std::size_t nearest = 0;
  double best = ade(noisy, gt_modes[0]);
  for (std::size_t m = 1; m < gt_modes.size(); ++m) {
    const double d = ade(noisy, gt_modes[m]);
    if (d < best) {
      best = d;
      nearest = m;
    }
  }
  const double label = nearest == static_cast<std::size_t>(gt_index) ? 1.0 : 0.0;

  const ForwardTrace trace = forward_trace(params, x_t, draws.t, ctx);
  const double logit = trace.stages.back().out.score_logit;

  LossBreakdown loss;
  loss.cls = bce_with_logits(logit, label);
  std::vector<StageUpstream> upstream(trace.stages.size());
  upstream.back().d_score_logit = cfg.lambda_cls * (sigmoid(logit) - label);
  loss.rec = rec_loss_and_upstream(trace, gt_flat, stages, cfg.lambda_rec,
                                   grad_out ? &upstream : nullptr);
  if (grad_out) *grad_out = backward_from_trace(params, trace, upstream);
  loss.total = cfg.lambda_rec * loss.rec + cfg.lambda_cls * loss.cls;
  return loss;
}

LossBreakdown training_step(DenoiserParams& params, AdamState& opt,
                            const Scene& scene, const Trajectory& gt,
                            const AnchorSet& anchors, const NoiseSchedule& sched,
                            const TrainConfig& cfg, Rng& rng) {
  const ContextTokens ctx = scene_tokens(scene);
  const StepDraws draws = draw_step(sched.trunc_step,
                                    static_cast<int>(anchors.k()),
                                    params.cfg.horizon, rng);
  std::vector<double> grad;
  const LossBreakdown loss =
      truncated_loss_and_grad(params, ctx, gt, anchors, sched, cfg, draws, &grad);
  adam_update(params.values, grad, opt, cfg);
  return loss;
}

LossBreakdown vanilla_training_step(DenoiserParams& params, AdamState& opt,
                                    const Scene& scene, int gt_index,
                                    const NoiseSchedule& sched,
                                    const TrainConfig& cfg, Rng& rng) {
  const ContextTokens ctx = scene_tokens(scene);
  const StepDraws draws = draw_step(sched.total_steps, 1, params.cfg.horizon, rng);
  std::vector<double> grad;
  const LossBreakdown loss = vanilla_loss_and_grad(params, ctx, scene.gt_modes,
                                                   gt_index, sched, cfg, draws, &grad);
  adam_update(params.values, grad, opt, cfg);
  return loss;
}

DenoiseFn make_denoise_fn(const DenoiserParams& params, ContextTokens tokens) {
  return [params, tokens = std::move(tokens)](std::span<const double> x_t, int t) {
    return forward(params, x_t, t, tokens).back();
  };
}

PlanResult plan_with(const DenoiseFn& fn, const AnchorSet& anchors,
                     const NoiseSchedule& sched, int n_steps, Rng& rng) {
  if (n_steps < 1) throw std::invalid_argument("plan: n_steps must be >= 1");
  if (anchors.k() == 0) throw std::invalid_argument("plan: anchor set is empty");
  const StepGrid grid = make_step_grid(sched.trunc_step, n_steps);
  for (const int t : grid.steps) {
    if (t > sched.trunc_step) {
      throw std::logic_error("plan: timestep above the truncation boundary");
    }
  }
  std::vector<std::vector<double>> starts;
  starts.reserve(anchors.k());
  for (const auto& a : anchors.anchors) {
    starts.push_back(anchored_sample(a, sched, sched.trunc_step, rng));
  }
  return run_denoise_loop(fn, std::move(starts), grid, sched);
}

PlanResult plan(const DenoiserParams& params, const Scene& scene,
                const AnchorSet& anchors, const NoiseSchedule& sched,
                int n_steps, Rng& rng) {
  return plan_with(make_denoise_fn(params, scene_tokens(scene)), anchors, sched,
                   n_steps, rng);
}

PlanResult vanilla_plan_with(const DenoiseFn& fn, int k_samples, int horizon,
                             const NoiseSchedule& sched, int n_steps, Rng& rng) {
  if (n_steps < 1) throw std::invalid_argument("plan: n_steps must be >= 1");
  if (k_samples < 1 || horizon < 1) {
    throw std::invalid_argument("plan: counts must be positive");
  }
  const StepGrid grid = make_step_grid(sched.total_steps, n_steps);
  std::vector<std::vector<double>> starts;
  starts.reserve(static_cast<std::size_t>(k_samples));
  for (int i = 0; i < k_samples; ++i) {
    starts.push_back(rng.normal_vec(2 * horizon));
  }
  return run_denoise_loop(fn, std::move(starts), grid, sched);
}

PlanResult vanilla_plan(const DenoiserParams& params, const Scene& scene,
                        const NoiseSchedule& sched, int n_steps, int k_samples,
                        Rng& rng) {
  return vanilla_plan_with(make_denoise_fn(params, scene_tokens(scene)), k_samples,
                           params.cfg.horizon, sched, n_steps, rng);
}

const Trajectory& select(const PlanResult& result) {
  if (result.candidates.empty() ||
      result.chosen >= static_cast<int>(result.candidates.size())) {
    throw std::invalid_argument("select: malformed plan result");
  }
  return result.candidates[static_cast<std::size_t>(result.chosen)];
}

AnchorSet fit_anchors(const std::vector<Scene>& scenes, int k, int n_restarts,
                      int max_iters, std::uint64_t seed) {
  std::vector<Trajectory> corpus;
  for (const auto& s : scenes) {
    for (const auto& m : s.gt_modes) corpus.push_back(m);
  }
  return kmeans_anchors(corpus, k, n_restarts, max_iters, seed);
}

TrainedPolicy train_policy(
    PolicyKind kind, const std::vector<Scene>& scenes, const AnchorSet* anchors,
    const NoiseSchedule& sched, const CascadeConfig& ccfg, const TrainConfig& cfg,
    const std::function<void(int, const LossBreakdown&)>& on_epoch) {
  validate_train_config(cfg);
  if (scenes.empty()) throw std::invalid_argument("train: no scenes");
  if (kind == PolicyKind::kTruncated && (!anchors || anchors->k() == 0)) {
    throw std::invalid_argument("train: truncated policy needs anchors");
  }

  TrainedPolicy out;
  out.kind = kind;
  out.params = init_params(ccfg, derive_seed(cfg.seed, 1));
  if (kind == PolicyKind::kTruncated) out.anchors = *anchors;
  Rng rng(derive_seed(cfg.seed, 2));

  std::vector<ContextTokens> tokens;
  tokens.reserve(scenes.size());
  for (const auto& s : scenes) tokens.push_back(scene_tokens(s));

  AdamState opt;
  std::vector<int> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad_sum(out.params.values.size(), 0.0);
  std::vector<double> grad(out.params.values.size(), 0.0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    fisher_yates(order, rng);
    LossBreakdown epoch_loss;
    int in_batch = 0;
    std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Scene& scene = scenes[static_cast<std::size_t>(order[step])];
      const ContextTokens& ctx = tokens[static_cast<std::size_t>(order[step])];
      const int gt_index =
          rng.uniform_int(0, static_cast<int>(scene.gt_modes.size()) - 1);

      LossBreakdown loss;
      if (kind == PolicyKind::kTruncated) {
        const StepDraws draws =
            draw_step(sched.trunc_step, static_cast<int>(out.anchors.k()),
                      ccfg.horizon, rng);
        loss = truncated_loss_and_grad(out.params, ctx,
                                       scene.gt_modes[static_cast<std::size_t>(gt_index)],
                                       out.anchors, sched, cfg, draws, &grad);
      } else {
        const StepDraws draws = draw_step(sched.total_steps, 1, ccfg.horizon, rng);
        loss = vanilla_loss_and_grad(out.params, ctx, scene.gt_modes, gt_index,
                                     sched, cfg, draws, &grad);
      }
      epoch_loss.rec += loss.rec;
      epoch_loss.cls += loss.cls;
      epoch_loss.total += loss.total;

      for (std::size_t j = 0; j < grad.size(); ++j) grad_sum[j] += grad[j];
      ++in_batch;
      if (in_batch == cfg.batch_size || step + 1 == order.size()) {
        const double inv = 1.0 / static_cast<double>(in_batch);
        for (double& g : grad_sum) g *= inv;
        adam_update(out.params.values, grad_sum, opt, cfg);
        std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
        in_batch = 0;
      }
    }
    const double inv_n = 1.0 / static_cast<double>(order.size());
    epoch_loss.rec *= inv_n;
    epoch_loss.cls *= inv_n;
    epoch_loss.total *= inv_n;
    out.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return out;
}

}  // namespace tdp
