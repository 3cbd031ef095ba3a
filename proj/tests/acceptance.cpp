// Release gate: re-checks the seven ship criteria end to end and prints one
// [PASS]/[FAIL] line per criterion, with the measured values and wall time.
// Exit status is the overall verdict. Criteria 5 and 6 drive the installed
// CLI binary as a subprocess; everything else runs in process against
// reference oracles.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "support/geometry_oracle.hpp"
#include "support/kmeans_oracle.hpp"
#include "tdp/anchors.hpp"
#include "tdp/denoiser.hpp"
#include "tdp/io.hpp"
#include "tdp/metrics.hpp"
#include "tdp/policy.hpp"
#include "tdp/rng.hpp"
#include "tdp/schedule.hpp"
#include "tdp/trajectory.hpp"
#include "tdp/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tdp;

namespace {

struct Verdict {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& on_fail) {
    if (!cond) {
      ok = false;
      detail << " FAILED{" << on_fail << "}";
    }
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const fs::path& dir, const std::string& args) {
  const fs::path log = dir / "_log.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + TDPLAN_BIN + "' " +
                          args + " >> '" + log.string() + "' 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

fs::path make_workspace(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tdplan_accept_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2) << "\n";
}

// -- criterion 1: schedule suite ---------------------------------------------

// Perfect-denoiser DDIM walk down `grid`; returns the max deviation from the
// analytic forward-diffused state at every visited step (semigroup property)
// and from x0 at the end (round trip).
double ddim_walk_drift(const NoiseSchedule& sched, int start, int n_steps,
                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x0(16), eps(16);
  for (double& v : x0) v = rng.uniform(-3.0, 3.0);
  for (double& v : eps) v = rng.normal();

  const StepGrid grid = make_step_grid(start, n_steps);
  std::vector<double> x = diffuse(x0, grid.steps.front(), eps, sched);
  double drift = 0.0;
  for (std::size_t i = 0; i + 1 < grid.steps.size(); ++i) {
    x = ddim_step(x, x0, grid.steps[i], grid.steps[i + 1], sched);
    const auto want = diffuse(x0, grid.steps[i + 1], eps, sched);
    for (std::size_t j = 0; j < x.size(); ++j) {
      drift = std::max(drift, std::abs(x[j] - want[j]));
    }
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    drift = std::max(drift, std::abs(x[j] - x0[j]));
  }
  return drift;
}

Verdict check_schedule() {
  Verdict v;
  const NoiseSchedule sched = build_linear_schedule(1000, 1e-4, 0.02, 0.05);
  v.require(sched.trunc_step == 50, "trunc_step != 50");
  v.require(sched.beta(1) == 1e-4 && sched.beta(1000) == 0.02,
            "beta endpoints off");

  bool beta_increasing = true;
  for (int t = 2; t <= sched.total_steps; ++t) {
    beta_increasing = beta_increasing && sched.beta(t) > sched.beta(t - 1);
  }
  v.require(beta_increasing, "betas not strictly increasing");

  v.require(sched.alpha_bar(0) == 1.0, "alpha_bar(0) != 1");
  bool abar_ok = true;
  for (int t = 1; t <= sched.total_steps; ++t) {
    abar_ok = abar_ok && sched.alpha_bar(t) < sched.alpha_bar(t - 1) &&
              sched.alpha_bar(t) > 0.0 && sched.alpha_bar(t) < 1.0;
  }
  v.require(abar_ok, "alpha_bar not strictly decreasing in (0, 1)");

  double drift = 0.0;
  drift = std::max(drift, ddim_walk_drift(sched, sched.trunc_step, 2, 11));
  drift = std::max(drift, ddim_walk_drift(sched, sched.total_steps, 20, 12));
  drift = std::max(drift, ddim_walk_drift(sched, sched.total_steps, 7, 13));
  v.require(drift <= 1e-12, "round trip / semigroup drift > 1e-12");

  v.detail << "trunc_step=" << sched.trunc_step << " max_drift=" << drift;
  return v;
}

// -- criterion 2: gradient suite ---------------------------------------------

ContextTokens make_tokens(int n_valid, std::uint64_t seed) {
  ContextTokens ctx;
  ctx.rows.assign(ContextTokens::kMaxTokens * ContextTokens::kDim, 0.0);
  ctx.valid.assign(ContextTokens::kMaxTokens, 0);
  Rng rng(seed);
  for (int i = 0; i < n_valid; ++i) {
    ctx.valid[i] = 1;
    for (int j = 0; j < ContextTokens::kDim; ++j) {
      ctx.rows[static_cast<std::size_t>(i) * ContextTokens::kDim + j] =
          rng.uniform(-2.0, 2.0);
    }
  }
  ctx.n_valid = n_valid;
  return ctx;
}

// Linear functional of the stage outputs; its exact parameter gradient is
// backward() with the coefficient vectors as upstream partials.
struct ProbeLoss {
  std::vector<StageUpstream> upstream;

  ProbeLoss(const CascadeConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    upstream.resize(cfg.stages);
    for (auto& up : upstream) {
      up.d_x0_hat.resize(static_cast<std::size_t>(cfg.traj_dim()));
      for (double& c : up.d_x0_hat) c = rng.uniform(-1.0, 1.0);
      up.d_score_logit = rng.uniform(-1.0, 1.0);
    }
  }

  double eval(const std::vector<StageOutput>& outs) const {
    double loss = 0.0;
    for (std::size_t m = 0; m < outs.size(); ++m) {
      for (std::size_t i = 0; i < outs[m].x0_hat.size(); ++i) {
        loss += upstream[m].d_x0_hat[i] * outs[m].x0_hat[i];
      }
      loss += upstream[m].d_score_logit * outs[m].score_logit;
    }
    return loss;
  }
};

bool near_relu_kink(const ForwardTrace& tr, double tol) {
  for (const auto& st : tr.stages) {
    for (const double a : st.a1) {
      if (std::abs(a) < tol) return true;
    }
    for (const double a : st.f1a) {
      if (std::abs(a) < tol) return true;
    }
  }
  return false;
}

Verdict check_gradients() {
  Verdict v;
  const CascadeConfig cfg;
  auto params = init_params(cfg, 42);
  const auto ctx = make_tokens(7, 77);
  Rng traj_rng(88);
  std::vector<double> x(static_cast<std::size_t>(cfg.traj_dim()));
  for (double& val : x) val = traj_rng.uniform(-5.0, 5.0);
  const int t = 25;
  const ProbeLoss probe(cfg, 123);

  const auto grad = backward(params, x, t, ctx, probe.upstream);
  v.require(grad.size() == params.values.size(), "gradient size mismatch");

  const double h = 1e-5;
  const double kink_tol = 1e-7;
  Rng pick(2024);
  int n_slices = 0;
  int checked_total = 0;
  double max_rel = 0.0;
  bool quota_met = true;
  for (const auto& s : param_layout(cfg)) {
    ++n_slices;
    const int want = static_cast<int>(std::min<std::size_t>(10, s.size));
    int checked = 0;
    std::set<std::size_t> tried;
    int attempts = 0;
    while (checked < want && attempts < 200) {
      ++attempts;
      const std::size_t p =
          s.offset + static_cast<std::size_t>(pick.uniform_int(
                         0, static_cast<int>(s.size) - 1));
      if (!tried.insert(p).second && tried.size() < s.size) continue;

      const double saved = params.values[p];
      params.values[p] = saved + h;
      const auto hi = forward_trace(params, x, t, ctx);
      params.values[p] = saved - h;
      const auto lo = forward_trace(params, x, t, ctx);
      params.values[p] = saved;
      if (near_relu_kink(hi, kink_tol) || near_relu_kink(lo, kink_tol)) {
        continue;
      }

      const double fd =
          (probe.eval(hi.outputs()) - probe.eval(lo.outputs())) / (2.0 * h);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(grad[p])});
      max_rel = std::max(max_rel, std::abs(fd - grad[p]) / denom);
      ++checked;
    }
    quota_met = quota_met && checked == want;
    checked_total += checked;
  }
  v.require(quota_met, "a slice missed its 10-parameter quota");
  v.require(max_rel < 1e-4, "finite-difference mismatch");
  v.detail << "slices=" << n_slices << " params_checked=" << checked_total
           << " max_rel_err=" << max_rel;
  return v;
}

// -- criterion 3: clustering vs exhaustive enumeration ------------------------

Verdict check_kmeans() {
  Verdict v;
  Rng rng(2026);
  double max_gap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(3, 8);
    const int k = rng.uniform_int(1, 3);
    std::vector<Trajectory> corpus;
    std::vector<std::vector<double>> flat;
    for (int i = 0; i < n; ++i) {
      Trajectory traj;
      for (int j = 0; j < 2; ++j) {
        traj.points.push_back({rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)});
      }
      flat.push_back(traj.flatten());
      corpus.push_back(std::move(traj));
    }
    const AnchorSet set = kmeans_anchors(corpus, k, 10, 100, 5000 + trial);
    const double best = tdp_test::exhaustive_best_inertia(flat, k);
    max_gap = std::max(max_gap, std::abs(set.inertia - best));
  }
  v.require(max_gap == 0.0, "restarted Lloyd missed the global optimum");
  v.detail << "corpora=50 max_gap=" << max_gap;
  return v;
}

// -- criterion 4: anchored-sampling statistics --------------------------------

Verdict check_anchored_stats() {
  Verdict v;
  const NoiseSchedule sched = build_linear_schedule(1000, 1e-4, 0.02, 0.05);
  const int t = sched.trunc_step;
  Trajectory anchor;
  for (int i = 1; i <= 8; ++i) {
    anchor.points.push_back({0.8 * i, 0.25 * i});
  }
  const std::vector<double> flat = anchor.flatten();
  const double abar = sched.alpha_bar(t);
  const int n = 10000;
  const std::size_t dim = flat.size();

  std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
  Rng rng(9001);
  for (int i = 0; i < n; ++i) {
    const auto draw = anchored_sample(anchor, sched, t, rng);
    for (std::size_t j = 0; j < dim; ++j) {
      sum[j] += draw[j];
      sumsq[j] += draw[j] * draw[j];
    }
  }

  const double want_var = 1.0 - abar;
  const double sigma_mean = std::sqrt(want_var / n);
  double worst_mean_sigmas = 0.0;
  double worst_var_rel = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double mean = sum[j] / n;
    const double var = (sumsq[j] - n * mean * mean) / (n - 1);
    worst_mean_sigmas = std::max(
        worst_mean_sigmas,
        std::abs(mean - std::sqrt(abar) * flat[j]) / sigma_mean);
    worst_var_rel =
        std::max(worst_var_rel, std::abs(var - want_var) / want_var);
  }
  v.require(worst_mean_sigmas <= 3.0, "a coordinate mean is off by > 3 sigma");
  v.require(worst_var_rel <= 0.10, "a coordinate variance is off by > 10%");
  v.detail << "draws=" << n << " max_mean_dev=" << worst_mean_sigmas
           << "sigma max_var_rel_err=" << worst_var_rel;
  return v;
}

// -- criterion 5: end-to-end benchmark ----------------------------------------

// Bounds pinned from the first seeded run of the default config (seed 42,
// epochs 120, batch 8) and frozen as regression gates: fork coverage 0.7222,
// minADE ratio 1.0851, selected-PDMS gap +0.0102.
constexpr double kMinForkCoverage = 0.70;
constexpr double kMaxAdeRatio = 1.10;
constexpr double kMinPdmsGap = -0.03;

Verdict check_benchmark() {
  Verdict v;
  const fs::path dir = make_workspace("bench");
  write_json(dir / "cfg.json", json::object());

  v.require(run_cli(dir, "gen-data --config cfg.json") == 0, "gen-data failed");
  v.require(run_cli(dir, "train --config cfg.json --baseline") == 0,
            "train failed");
  v.require(run_cli(dir, "eval --config cfg.json") == 0, "eval failed");
  if (!v.ok) return v;

  const json report = json::parse(slurp(dir / "report.json"));
  const double fork_cov = report.at("truncated").at("fork_mode_coverage");
  const double ade_ratio = double(report.at("truncated").at("min_ade")) /
                           double(report.at("vanilla").at("min_ade"));
  const double pdms_gap = double(report.at("truncated").at("mean_pdms")) -
                          double(report.at("vanilla").at("mean_pdms"));
  const double step_ratio = report.at("step_ratio");

  v.require(fork_cov >= kMinForkCoverage, "fork coverage below bound");
  v.require(ade_ratio <= kMaxAdeRatio, "minADE ratio above bound");
  v.require(pdms_gap >= kMinPdmsGap, "selected-PDMS gap below bound");
  v.require(step_ratio == 10.0, "step ratio != 10");

  // Score calibration direction on the trained policy: candidates that land
  // within 0.5 m ADE of a gt mode must outscore the rest on average.
  const RunConfig cfg = load_config((dir / "cfg.json").string());
  const ModelFile model = load_model((dir / "model_trunc.bin").string());
  const NoiseSchedule sched = build_schedule(model.schedule);
  const auto scenes = load_scenes((dir / "corpus.jsonl").string());
  double close_sum = 0.0, far_sum = 0.0;
  int close_n = 0, far_n = 0;
  for (int i = 0; i < cfg.data.eval_scenes; ++i) {
    const Scene& scene =
        scenes[static_cast<std::size_t>(cfg.data.train_scenes + i)];
    Rng rng(derive_seed(derive_seed(cfg.eval.seed, 1),
                        static_cast<std::uint64_t>(i)));
    const PlanResult result =
        plan(model.policy.params, scene, model.policy.anchors, sched,
             cfg.eval.trunc_steps, rng);
    for (std::size_t c = 0; c < result.candidates.size(); ++c) {
      const double ade = min_ade({result.candidates[c]}, scene.gt_modes);
      if (ade < 0.5) {
        close_sum += result.scores[c];
        ++close_n;
      } else {
        far_sum += result.scores[c];
        ++far_n;
      }
    }
  }
  const double close_mean = close_n > 0 ? close_sum / close_n : 0.0;
  const double far_mean = far_n > 0 ? far_sum / far_n : 0.0;
  v.require(close_n > 0 && far_n > 0 && close_mean > far_mean,
            "score rank property violated");

  v.detail << "fork_coverage=" << fork_cov << " (>=" << kMinForkCoverage
           << ") ade_ratio=" << ade_ratio << " (<=" << kMaxAdeRatio
           << ") pdms_gap=" << pdms_gap << " (>=" << kMinPdmsGap
           << ") step_ratio=" << step_ratio << " score_rank=" << close_mean
           << ">" << far_mean;
  return v;
}

// -- criterion 6: cross-run determinism ---------------------------------------

json scrub_timing(const fs::path& report_path) {
  json j = json::parse(slurp(report_path));
  j["truncated"]["wall_time_per_scene"] = 0.0;
  j["vanilla"]["wall_time_per_scene"] = 0.0;
  return j;
}

Verdict check_determinism() {
  Verdict v;
  json cfg;
  cfg["data"] = {{"train_scenes", 40}, {"eval_scenes", 10}, {"seed", 42}};
  cfg["train"] = {{"epochs", 3}};

  fs::path dirs[2];
  for (int r = 0; r < 2; ++r) {
    const fs::path dir = make_workspace("determinism_" + std::to_string(r));
    dirs[r] = dir;
    write_json(dir / "cfg.json", cfg);
    v.require(run_cli(dir, "gen-data --config cfg.json") == 0,
              "gen-data failed");
    v.require(run_cli(dir, "train --config cfg.json --baseline") == 0,
              "train failed");
    v.require(run_cli(dir, "eval --config cfg.json") == 0, "eval failed");
  }
  if (!v.ok) return v;

  int identical = 0;
  for (const char* name : {"corpus.jsonl", "model_trunc.bin",
                           "model_vanilla.bin"}) {
    const std::string a = slurp(dirs[0] / name);
    const std::string b = slurp(dirs[1] / name);
    v.require(!a.empty() && a == b,
              std::string(name) + " differs between runs");
    identical += a == b && !a.empty();
  }
  v.require(scrub_timing(dirs[0] / "report.json") ==
                scrub_timing(dirs[1] / "report.json"),
            "report.json differs beyond timing fields");
  v.detail << "byte_identical_artifacts=" << identical
           << "/3 reports_equal_minus_timing=" << (v.ok ? "yes" : "no");
  return v;
}

// -- criterion 7: scorer suite -------------------------------------------------

Verdict check_scorer() {
  Verdict v;

  bool gt_legal = true;
  bool formula_ok = true;
  const std::string kinds[] = {"fork", "obstacle", "merge"};
  for (int i = 0; i < 30; ++i) {
    const Scene s = gen_scene(kinds[i % 3], 700 + i);
    for (const auto& mode : s.gt_modes) {
      const PdmScore ps = pdm_score(mode, s);
      gt_legal = gt_legal && ps.nc == 1.0 && ps.dac == 1.0 &&
                 ps.total >= 0.0 && ps.total <= 1.0;
      const double recomposed = ps.nc * ps.dac *
                                (5.0 * ps.ttc + 2.0 * ps.comfort +
                                 5.0 * ps.progress) / 12.0;
      formula_ok = formula_ok && ps.total == recomposed;
    }
  }
  v.require(gt_legal, "a gt mode failed the nc/dac gates");
  v.require(formula_ok, "total != gate-then-weight recomposition");

  // Gate behavior: a path through an obstacle scores 0, as does one far
  // outside every corridor.
  const Scene obst = gen_scene("obstacle", 701);
  Trajectory ram;
  for (std::size_t i = 0; i < obst.gt_modes[0].points.size(); ++i) {
    ram.points.push_back(obst.obstacles.front().center_at(i * obst.dt));
  }
  const PdmScore ram_score = pdm_score(ram, obst);
  v.require(ram_score.nc == 0.0 && ram_score.total == 0.0,
            "collision gate did not zero the score");

  Trajectory offroad = obst.gt_modes[0];
  for (auto& p : offroad.points) p.y += 1000.0;
  const PdmScore off_score = pdm_score(offroad, obst);
  v.require(off_score.dac == 0.0 && off_score.total == 0.0,
            "drivable gate did not zero the score");

  int agreements = 0;
  Rng rng(31338);
  for (int pair = 0; pair < 100; ++pair) {
    const Scene s = gen_scene(kinds[pair % 3], 1200 + pair);
    Trajectory probe = s.gt_modes[pair % s.gt_modes.size()];
    const double noise = rng.uniform(0.0, 2.0);
    for (auto& p : probe.points) {
      p.x += noise * rng.normal();
      p.y += noise * rng.normal();
    }
    const bool nc_agree =
        collision_free(probe, s) == tdp_test::collision_free_oracle(probe, s);
    const bool dac_agree =
        drivable(probe, s) == tdp_test::drivable_oracle(probe, s);
    v.require(nc_agree, "collision check disagrees with 1 cm sampling");
    v.require(dac_agree, "drivable check disagrees with 1 cm sampling");
    agreements += nc_agree && dac_agree;
  }
  v.detail << "gt_modes_gated_ok scenes=30 oracle_agreement=" << agreements
           << "/100";
  return v;
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const Entry entries[] = {
      {"schedule suite", 1.0, check_schedule},
      {"gradient suite", 30.0, check_gradients},
      {"k-means vs exhaustive oracle", 10.0, check_kmeans},
      {"anchored-sampling statistics", 5.0, check_anchored_stats},
      {"benchmark: 2-step truncated vs 20-step vanilla", 600.0,
       check_benchmark},
      {"cross-run determinism", 600.0, check_determinism},
      {"scorer suite", 10.0, check_scorer},
  };

  bool all_ok = true;
  int idx = 0;
  for (const auto& e : entries) {
    ++idx;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = e.run();
    } catch (const std::exception& ex) {
      v.ok = false;
      v.detail << "threw: " << ex.what();
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (wall > e.budget_s) {
      v.ok = false;
      v.detail << " FAILED{over " << e.budget_s << "s budget}";
    }
    std::printf("[%s] %d. %s: %s (%.1fs, budget %.0fs)\n",
                v.ok ? "PASS" : "FAIL", idx, e.name, v.detail.str().c_str(),
                wall, e.budget_s);
    std::fflush(stdout);
    all_ok = all_ok && v.ok;
  }
  return all_ok ? 0 : 1;
}
