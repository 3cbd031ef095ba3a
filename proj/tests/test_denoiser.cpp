#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tdp/denoiser.hpp"
#include "tdp/rng.hpp"
#include "tdp/world.hpp"

using namespace tdp;

namespace {

ContextTokens make_tokens(int n_valid_rows, std::uint64_t seed) {
  ContextTokens ctx;
  ctx.rows.assign(ContextTokens::kMaxTokens * ContextTokens::kDim, 0.0);
  ctx.valid.assign(ContextTokens::kMaxTokens, 0);
  Rng rng(seed);
  for (int i = 0; i < n_valid_rows; ++i) {
    ctx.valid[i] = 1;
    for (int j = 0; j < ContextTokens::kDim; ++j) {
      ctx.rows[static_cast<std::size_t>(i) * ContextTokens::kDim + j] =
          rng.uniform(-2.0, 2.0);
    }
  }
  ctx.n_valid = n_valid_rows;
  return ctx;
}

std::vector<double> random_traj(const CascadeConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(cfg.traj_dim()));
  for (double& v : x) v = rng.uniform(-5.0, 5.0);
  return x;
}

// Scalar probe loss: sum over stages of fixed linear functionals of the
// outputs. Its exact parameter gradient is backward() with the coefficient
// vectors as upstream partials.
struct ProbeLoss {
  std::vector<StageUpstream> upstream;

  ProbeLoss(const CascadeConfig& cfg, std::uint64_t seed, bool with_traj = true) {
    Rng rng(seed);
    upstream.resize(cfg.stages);
    for (auto& up : upstream) {
      if (with_traj) {
        up.d_x0_hat.resize(static_cast<std::size_t>(cfg.traj_dim()));
        for (double& c : up.d_x0_hat) c = rng.uniform(-1.0, 1.0);
      }
      up.d_score_logit = rng.uniform(-1.0, 1.0);
    }
  }

  double eval(const std::vector<StageOutput>& outs) const {
    double loss = 0.0;
    for (std::size_t m = 0; m < outs.size(); ++m) {
      if (!upstream[m].d_x0_hat.empty()) {
        for (std::size_t i = 0; i < outs[m].x0_hat.size(); ++i) {
          loss += upstream[m].d_x0_hat[i] * outs[m].x0_hat[i];
        }
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

}  // namespace

TEST_CASE("time embedding matches the closed form") {
  const auto e0 = time_embed(0, 4);
  REQUIRE(e0.size() == 4);
  CHECK(e0[0] == 0.0);
  CHECK(e0[1] == 1.0);
  CHECK(e0[2] == 0.0);
  CHECK(e0[3] == 1.0);

  // dim=2 has a single unit-frequency pair
  const auto e1 = time_embed(10000, 2);
  CHECK(e1[0] == doctest::Approx(std::sin(10000.0)).epsilon(1e-15));
  CHECK(e1[1] == doctest::Approx(std::cos(10000.0)).epsilon(1e-15));

  // dim=4: second pair runs at frequency 10000^(-1/2) = 0.01
  const auto e2 = time_embed(37, 4);
  CHECK(e2[0] == doctest::Approx(std::sin(37.0)).epsilon(1e-15));
  CHECK(e2[2] == doctest::Approx(std::sin(0.37)).epsilon(1e-15));
  CHECK(e2[3] == doctest::Approx(std::cos(0.37)).epsilon(1e-15));

  for (const int t : {0, 1, 50, 1000}) {
    const auto e = time_embed(t, 16);
    REQUIRE(e.size() == 16);
    for (const double v : e) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }

  CHECK_THROWS_AS(time_embed(1, 3), std::invalid_argument);
  CHECK_THROWS_AS(time_embed(1, 0), std::invalid_argument);
}

TEST_CASE("parameter layout tiles the vector exactly") {
  const CascadeConfig cfg;
  const auto slices = param_layout(cfg);

  std::size_t expect_offset = 0;
  for (const auto& s : slices) {
    CHECK(s.offset == expect_offset);
    expect_offset += s.size;
  }
  CHECK(expect_offset == param_count(cfg));
  CHECK(param_count(cfg) == 73202);

  std::vector<std::string> names;
  for (const auto& s : slices) names.push_back(s.name);
  const std::vector<std::string> expect = {
      "shared.ctx_lift.W", "shared.ctx_lift.b", "shared.t_proj.W", "shared.t_proj.b",
      "stage1.mlp_in1.W",  "stage1.mlp_in1.b",  "stage1.mlp_in2.W",
      "stage1.mlp_in2.b",  "stage1.attn.Wq",    "stage1.attn.Wk",
      "stage1.attn.Wv",    "stage1.ffn1.W",     "stage1.ffn1.b",
      "stage1.ffn2.W",     "stage1.ffn2.b",     "stage1.traj_head.W",
      "stage1.traj_head.b", "stage1.score_head.W", "stage1.score_head.b",
      "stage2.mlp_in1.W",  "stage2.mlp_in1.b",  "stage2.mlp_in2.W",
      "stage2.mlp_in2.b",  "stage2.attn.Wq",    "stage2.attn.Wk",
      "stage2.attn.Wv",    "stage2.ffn1.W",     "stage2.ffn1.b",
      "stage2.ffn2.W",     "stage2.ffn2.b",     "stage2.traj_head.W",
      "stage2.traj_head.b", "stage2.score_head.W", "stage2.score_head.b"};
  CHECK(names == expect);

  // spot-check sizes against hand counts at the default shape
  auto size_of = [&](const std::string& n) {
    for (const auto& s : slices) {
      if (s.name == n) return s.size;
    }
    return std::size_t{0};
  };
  CHECK(size_of("shared.ctx_lift.W") == 6 * 64);
  CHECK(size_of("shared.t_proj.W") == 16 * 16);
  CHECK(size_of("stage1.mlp_in1.W") == 32 * 64);
  CHECK(size_of("stage1.attn.Wq") == 64 * 64);
  CHECK(size_of("stage2.ffn1.W") == 64 * 128);
  CHECK(size_of("stage2.traj_head.W") == 64 * 16);
  CHECK(size_of("stage2.score_head.W") == 64);
  CHECK(size_of("stage2.score_head.b") == 1);
}

TEST_CASE("layout scales with the configured shape") {
  CascadeConfig cfg;
  cfg.stages = 1;
  cfg.hidden = 8;
  cfg.t_embed = 4;
  cfg.t_embed_raw = 4;
  cfg.horizon = 3;
  const auto slices = param_layout(cfg);
  REQUIRE(slices.size() == 4 + 15);
  std::size_t total = 0;
  for (const auto& s : slices) total += s.size;
  CHECK(total == param_count(cfg));

  CascadeConfig bad = cfg;
  bad.t_embed_raw = 5;
  CHECK_THROWS_AS(param_count(bad), std::invalid_argument);
  bad = cfg;
  bad.stages = 0;
  CHECK_THROWS_AS(param_layout(bad), std::invalid_argument);
}

TEST_CASE("initialization is deterministic with zero biases") {
  const CascadeConfig cfg;
  const auto p1 = init_params(cfg, 42);
  const auto p2 = init_params(cfg, 42);
  const auto p3 = init_params(cfg, 43);
  REQUIRE(p1.values.size() == param_count(cfg));
  CHECK(p1.values == p2.values);
  CHECK(p1.values != p3.values);

  for (const auto& s : param_layout(cfg)) {
    const bool is_bias = s.fan_in == 0;
    const double limit = is_bias ? 0.0 : std::sqrt(6.0 / (s.fan_in + s.fan_out));
    const bool traj = s.name.find("traj_head.W") != std::string::npos;
    double max_abs = 0.0;
    for (std::size_t i = 0; i < s.size; ++i) {
      max_abs = std::max(max_abs, std::abs(p1.values[s.offset + i]));
    }
    if (is_bias) {
      CHECK(max_abs == 0.0);
    } else if (traj) {
      CHECK(max_abs <= 0.01 * limit);
      CHECK(max_abs > 0.0);
    } else {
      CHECK(max_abs <= limit);
      CHECK(max_abs > 0.1 * limit);  // draws actually landed in the slice
    }
  }
}

TEST_CASE("fresh parameters keep the cascade near the identity") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 42);
  const auto ctx = make_tokens(9, 5);
  const auto x = random_traj(cfg, 6);
  const auto outs = forward(params, x, 25, ctx);
  REQUIRE(outs.size() == 2);
  for (const auto& o : outs) {
    REQUIRE(o.x0_hat.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(o.x0_hat[i] - x[i]) < 1.0);
    }
  }
}

TEST_CASE("all-zero parameters act as the identity with zero logits") {
  const CascadeConfig cfg;
  DenoiserParams params;
  params.cfg = cfg;
  params.values.assign(param_count(cfg), 0.0);
  const auto ctx = make_tokens(4, 11);
  const auto x = random_traj(cfg, 12);
  const auto outs = forward(params, x, 7, ctx);
  for (const auto& o : outs) {
    CHECK(o.x0_hat == x);
    CHECK(o.score_logit == 0.0);
  }
}

TEST_CASE("masked rows cannot influence the result") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 9);
  const auto x = random_traj(cfg, 3);

  auto ctx = make_tokens(5, 21);
  const auto base = forward(params, x, 13, ctx);

  // scribble over every masked row
  Rng rng(99);
  for (int i = 0; i < ContextTokens::kMaxTokens; ++i) {
    if (ctx.valid[i]) continue;
    for (int j = 0; j < ContextTokens::kDim; ++j) {
      ctx.rows[static_cast<std::size_t>(i) * ContextTokens::kDim + j] =
          rng.uniform(-1e6, 1e6);
    }
  }
  const auto scribbled = forward(params, x, 13, ctx);
  REQUIRE(base.size() == scribbled.size());
  for (std::size_t m = 0; m < base.size(); ++m) {
    CHECK(base[m].x0_hat == scribbled[m].x0_hat);
    CHECK(base[m].score_logit == scribbled[m].score_logit);
  }
}

TEST_CASE("duplicated context tokens split attention without changing it") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 10);
  const auto x = random_traj(cfg, 4);

  ContextTokens one = make_tokens(1, 31);
  ContextTokens two = one;
  two.valid[1] = 1;
  two.n_valid = 2;
  for (int j = 0; j < ContextTokens::kDim; ++j) {
    two.rows[ContextTokens::kDim + j] = two.rows[j];
  }

  const auto a = forward(params, x, 3, one);
  const auto b = forward(params, x, 3, two);
  for (std::size_t m = 0; m < a.size(); ++m) {
    CHECK(a[m].x0_hat == b[m].x0_hat);
    CHECK(a[m].score_logit == b[m].score_logit);
  }
}

TEST_CASE("invalid inputs are rejected") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 1);
  const auto ctx = make_tokens(3, 1);
  const auto x = random_traj(cfg, 1);

  std::vector<double> short_x(x.begin(), x.end() - 1);
  CHECK_THROWS_AS(forward(params, short_x, 5, ctx), std::invalid_argument);

  ContextTokens none = make_tokens(0, 1);
  CHECK_THROWS_AS(forward(params, x, 5, none), std::invalid_argument);

  ContextTokens misshapen = ctx;
  misshapen.rows.pop_back();
  CHECK_THROWS_AS(forward(params, x, 5, misshapen), std::invalid_argument);

  DenoiserParams trimmed = params;
  trimmed.values.pop_back();
  CHECK_THROWS_AS(forward(trimmed, x, 5, ctx), std::invalid_argument);

  std::vector<StageUpstream> ups(1);  // config has 2 stages
  CHECK_THROWS_AS(backward(params, x, 5, ctx, ups), std::invalid_argument);

  std::vector<StageUpstream> bad(2);
  bad[0].d_x0_hat.assign(3, 0.0);
  CHECK_THROWS_AS(backward(params, x, 5, ctx, bad), std::invalid_argument);
}

TEST_CASE("zero upstream yields an exactly zero gradient") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 2);
  const auto ctx = make_tokens(6, 2);
  const auto x = random_traj(cfg, 2);
  std::vector<StageUpstream> ups(2);
  const auto grad = backward(params, x, 40, ctx, ups);
  REQUIRE(grad.size() == params.values.size());
  for (const double g : grad) CHECK(g == 0.0);
}

TEST_CASE("final-stage score bias gradient equals its upstream partial") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 3);
  const auto ctx = make_tokens(6, 3);
  const auto x = random_traj(cfg, 3);
  std::vector<StageUpstream> ups(2);
  ups[0].d_score_logit = 0.25;
  ups[1].d_score_logit = -1.75;
  const auto grad = backward(params, x, 17, ctx, ups);

  const auto slices = param_layout(cfg);
  for (const auto& s : slices) {
    if (s.name == "stage2.score_head.b") {
      CHECK(grad[s.offset] == -1.75);
    }
  }
}

TEST_CASE("backward matches central finite differences on every slice") {
  const CascadeConfig cfg;
  auto params = init_params(cfg, 42);
  const auto ctx = make_tokens(7, 77);
  const auto x = random_traj(cfg, 88);
  const int t = 25;
  const ProbeLoss probe(cfg, 123);

  const auto grad = backward(params, x, t, ctx, probe.upstream);
  REQUIRE(grad.size() == params.values.size());

  const double h = 1e-5;
  const double kink_tol = 1e-7;
  Rng pick(2024);
  int checked_total = 0;
  for (const auto& s : param_layout(cfg)) {
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
      const auto trace_hi = forward_trace(params, x, t, ctx);
      params.values[p] = saved - h;
      const auto trace_lo = forward_trace(params, x, t, ctx);
      params.values[p] = saved;

      if (near_relu_kink(trace_hi, kink_tol) || near_relu_kink(trace_lo, kink_tol)) {
        continue;  // FD is unreliable across a ReLU corner; sample another index
      }
      const double fd = (probe.eval(trace_hi.outputs()) -
                         probe.eval(trace_lo.outputs())) /
                        (2.0 * h);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(grad[p])});
      const double rel = std::abs(fd - grad[p]) / denom;
      INFO("slice " << s.name << " param " << p << " fd " << fd << " grad "
                    << grad[p]);
      CHECK(rel < 1e-4);
      ++checked;
    }
    CHECK(checked == want);
    checked_total += checked;
  }
  CHECK(checked_total >= 300);
}

TEST_CASE("score-only upstream gradients also match finite differences") {
  const CascadeConfig cfg;
  auto params = init_params(cfg, 5);
  const auto ctx = make_tokens(10, 55);
  const auto x = random_traj(cfg, 56);
  const int t = 42;
  const ProbeLoss probe(cfg, 321, /*with_traj=*/false);

  const auto grad = backward(params, x, t, ctx, probe.upstream);
  const double h = 1e-5;
  Rng pick(7);
  int checked = 0;
  for (int i = 0; i < 60 && checked < 40; ++i) {
    const std::size_t p = static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<int>(params.values.size()) - 1));
    const double saved = params.values[p];
    params.values[p] = saved + h;
    const auto hi = forward_trace(params, x, t, ctx);
    params.values[p] = saved - h;
    const auto lo = forward_trace(params, x, t, ctx);
    params.values[p] = saved;
    if (near_relu_kink(hi, 1e-7) || near_relu_kink(lo, 1e-7)) continue;
    const double fd = (probe.eval(hi.outputs()) - probe.eval(lo.outputs())) / (2.0 * h);
    const double denom = std::max({1e-6, std::abs(fd), std::abs(grad[p])});
    CHECK(std::abs(fd - grad[p]) / denom < 1e-4);
    ++checked;
  }
  CHECK(checked >= 30);
}

TEST_CASE("backward agrees with backward_from_trace bitwise") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 8);
  const auto ctx = make_tokens(5, 8);
  const auto x = random_traj(cfg, 8);
  const ProbeLoss probe(cfg, 8);
  const auto trace = forward_trace(params, x, 33, ctx);
  const auto g1 = backward_from_trace(params, trace, probe.upstream);
  const auto g2 = backward(params, x, 33, ctx, probe.upstream);
  CHECK(g1 == g2);
}

TEST_CASE("outputs stay finite and bounded across random inputs") {
  const CascadeConfig cfg;
  const auto params = init_params(cfg, 1234);
  Rng rng(4321);
  for (int it = 0; it < 20; ++it) {
    const int nv = rng.uniform_int(1, ContextTokens::kMaxTokens);
    const auto ctx = make_tokens(nv, 1000 + it);
    const auto x = random_traj(cfg, 2000 + it);
    const int t = rng.uniform_int(0, 1000);
    const auto outs = forward(params, x, t, ctx);
    for (const auto& o : outs) {
      CHECK(std::isfinite(o.score_logit));
      for (const double v : o.x0_hat) {
        REQUIRE(std::isfinite(v));
        CHECK(std::abs(v) <= 1e3);
      }
    }
  }
}
