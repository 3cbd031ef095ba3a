#include "tdp/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "tdp/rng.hpp"

namespace tdp {
namespace {

void validate_cfg(const CascadeConfig& cfg) {
  if (cfg.stages < 1 || cfg.hidden < 1 || cfg.t_embed < 1 || cfg.t_embed_raw < 1 ||
      cfg.horizon < 1 || cfg.ctx_dim < 1 || cfg.ctx_tokens < 1) {
    throw std::invalid_argument("cascade config: all dimensions must be positive");
  }
  if (cfg.t_embed_raw % 2 != 0 || cfg.hidden % 2 != 0) {
    throw std::invalid_argument("cascade config: hidden and t_embed_raw must be even");
  }
}

// y = x W + b (W row-major [in][out]; b may be null)
void affine(const double* x, const double* w, const double* b, double* y, int in,
            int out) {
  for (int j = 0; j < out; ++j) y[j] = b ? b[j] : 0.0;
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* row = w + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) y[j] += xi * row[j];
  }
}

// dW += x^T dy, db += dy
void grad_affine(const double* x, const double* dy, double* dw, double* db, int in,
                 int out) {
  for (int i = 0; i < in; ++i) {
    const double xi = x[i];
    double* row = dw + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) row[j] += xi * dy[j];
  }
  if (db) {
    for (int j = 0; j < out; ++j) db[j] += dy[j];
  }
}

// dx += W dy
void backprop_input(const double* w, const double* dy, double* dx, int in, int out) {
  for (int i = 0; i < in; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * out;
    double acc = 0.0;
    for (int j = 0; j < out; ++j) acc += row[j] * dy[j];
    dx[i] += acc;
  }
}

struct StageOffsets {
  std::size_t w1, b1, w2, b2, wq, wk, wv, f1w, f1b, f2w, f2b, tw, tb, sw, sb;
};

struct Layout {
  std::size_t ctx_lift_w, ctx_lift_b, t_proj_w, t_proj_b;
  std::vector<StageOffsets> stage;
  std::size_t total;
};

Layout make_layout(const CascadeConfig& cfg) {
  const std::size_t d = cfg.hidden;
  const std::size_t io = cfg.traj_dim();
  const std::size_t zin = io + cfg.t_embed;
  Layout lay;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t here = at;
    at += n;
    return here;
  };
  lay.ctx_lift_w = take(static_cast<std::size_t>(cfg.ctx_dim) * d);
  lay.ctx_lift_b = take(d);
  lay.t_proj_w = take(static_cast<std::size_t>(cfg.t_embed_raw) * cfg.t_embed);
  lay.t_proj_b = take(cfg.t_embed);
  for (int m = 0; m < cfg.stages; ++m) {
    StageOffsets s;
    s.w1 = take(zin * d);
    s.b1 = take(d);
    s.w2 = take(d * d);
    s.b2 = take(d);
    s.wq = take(d * d);
    s.wk = take(d * d);
    s.wv = take(d * d);
    s.f1w = take(d * 2 * d);
    s.f1b = take(2 * d);
    s.f2w = take(2 * d * d);
    s.f2b = take(d);
    s.tw = take(d * io);
    s.tb = take(io);
    s.sw = take(d);
    s.sb = take(1);
    lay.stage.push_back(s);
  }
  lay.total = at;
  return lay;
}

}  // namespace

std::vector<ParamSlice> param_layout(const CascadeConfig& cfg) {
  validate_cfg(cfg);
  const int d = cfg.hidden;
  const int io = cfg.traj_dim();
  const int zin = io + cfg.t_embed;
  std::vector<ParamSlice> slices;
  std::size_t at = 0;
  auto add = [&](const std::string& name, int fan_in, int fan_out, bool bias) {
    const std::size_t size = bias ? static_cast<std::size_t>(fan_out)
                                  : static_cast<std::size_t>(fan_in) * fan_out;
    slices.push_back({name, at, size, bias ? 0 : fan_in, fan_out});
    at += size;
  };
  add("shared.ctx_lift.W", cfg.ctx_dim, d, false);
  add("shared.ctx_lift.b", 0, d, true);
  add("shared.t_proj.W", cfg.t_embed_raw, cfg.t_embed, false);
  add("shared.t_proj.b", 0, cfg.t_embed, true);
  for (int m = 1; m <= cfg.stages; ++m) {
    const std::string p = "stage" + std::to_string(m) + ".";
    add(p + "mlp_in1.W", zin, d, false);
    add(p + "mlp_in1.b", 0, d, true);
    add(p + "mlp_in2.W", d, d, false);
    add(p + "mlp_in2.b", 0, d, true);
    add(p + "attn.Wq", d, d, false);
    add(p + "attn.Wk", d, d, false);
    add(p + "attn.Wv", d, d, false);
    add(p + "ffn1.W", d, 2 * d, false);
    add(p + "ffn1.b", 0, 2 * d, true);
    add(p + "ffn2.W", 2 * d, d, false);
    add(p + "ffn2.b", 0, d, true);
    add(p + "traj_head.W", d, io, false);
    add(p + "traj_head.b", 0, io, true);
    add(p + "score_head.W", d, 1, false);
    add(p + "score_head.b", 0, 1, true);
  }
  return slices;
}

std::size_t param_count(const CascadeConfig& cfg) {
  validate_cfg(cfg);
  return make_layout(cfg).total;
}

std::vector<double> time_embed(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw std::invalid_argument("time_embed: dim must be a positive even number");
  }
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  return out;
}

DenoiserParams init_params(const CascadeConfig& cfg, std::uint64_t seed) {
  const auto slices = param_layout(cfg);
  DenoiserParams params;
  params.cfg = cfg;
  params.values.assign(param_count(cfg), 0.0);
  Rng rng(seed);
  for (const auto& s : slices) {
    if (s.fan_in == 0) continue;  // biases stay zero, no draws consumed
    const double limit = std::sqrt(6.0 / (s.fan_in + s.fan_out));
    const bool traj = s.name.find("traj_head.W") != std::string::npos;
    for (std::size_t i = 0; i < s.size; ++i) {
      double v = rng.uniform(-limit, limit);
      if (traj) v *= 0.01;
      params.values[s.offset + i] = v;
    }
  }
  return params;
}

ForwardTrace forward_trace(const DenoiserParams& params, std::span<const double> x_t,
                           int t, const ContextTokens& ctx) {
  const CascadeConfig& cfg = params.cfg;
  validate_cfg(cfg);
  const int d = cfg.hidden;
  const int io = cfg.traj_dim();
  const int zin = io + cfg.t_embed;
  if (params.values.size() != param_count(cfg)) {
    throw std::invalid_argument("forward: parameter vector length mismatch");
  }
  if (static_cast<int>(x_t.size()) != io) {
    throw std::invalid_argument("forward: x_t must have length 2H");
  }
  if (static_cast<int>(ctx.rows.size()) != cfg.ctx_tokens * cfg.ctx_dim ||
      static_cast<int>(ctx.valid.size()) != cfg.ctx_tokens) {
    throw std::invalid_argument("forward: context token shape mismatch");
  }
  const Layout lay = make_layout(cfg);
  const double* pv = params.values.data();

  ForwardTrace tr;
  tr.x_t.assign(x_t.begin(), x_t.end());
  tr.t = t;
  for (int i = 0; i < cfg.ctx_tokens; ++i) {
    if (ctx.valid[i]) tr.valid_rows.push_back(i);
  }
  if (tr.valid_rows.empty()) {
    throw std::invalid_argument("forward: every context row is masked");
  }

  tr.e_raw = time_embed(t, cfg.t_embed_raw);
  tr.e_t.assign(cfg.t_embed, 0.0);
  affine(tr.e_raw.data(), pv + lay.t_proj_w, pv + lay.t_proj_b, tr.e_t.data(),
         cfg.t_embed_raw, cfg.t_embed);

  tr.ctx_rows.reserve(tr.valid_rows.size());
  tr.lifted.reserve(tr.valid_rows.size());
  for (const int r : tr.valid_rows) {
    const double* row = ctx.rows.data() + static_cast<std::size_t>(r) * cfg.ctx_dim;
    tr.ctx_rows.emplace_back(row, row + cfg.ctx_dim);
    std::vector<double> c(static_cast<std::size_t>(d), 0.0);
    affine(row, pv + lay.ctx_lift_w, pv + lay.ctx_lift_b, c.data(), cfg.ctx_dim, d);
    tr.lifted.push_back(std::move(c));
  }

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> u(x_t.begin(), x_t.end());
  for (int m = 0; m < cfg.stages; ++m) {
    const StageOffsets& so = lay.stage[m];
    ForwardTrace::Stage st;
    st.u = u;
    st.z.reserve(static_cast<std::size_t>(zin));
    st.z.insert(st.z.end(), u.begin(), u.end());
    st.z.insert(st.z.end(), tr.e_t.begin(), tr.e_t.end());

    st.a1.assign(d, 0.0);
    affine(st.z.data(), pv + so.w1, pv + so.b1, st.a1.data(), zin, d);
    st.h1.resize(d);
    for (int i = 0; i < d; ++i) st.h1[i] = st.a1[i] > 0.0 ? st.a1[i] : 0.0;
    st.h2.assign(d, 0.0);
    affine(st.h1.data(), pv + so.w2, pv + so.b2, st.h2.data(), d, d);

    st.q.assign(d, 0.0);
    affine(st.h2.data(), pv + so.wq, nullptr, st.q.data(), d, d);
    const std::size_t nv = tr.valid_rows.size();
    st.keys.resize(nv);
    st.vals.resize(nv);
    std::vector<double> logits(nv);
    for (std::size_t j = 0; j < nv; ++j) {
      st.keys[j].assign(d, 0.0);
      st.vals[j].assign(d, 0.0);
      affine(tr.lifted[j].data(), pv + so.wk, nullptr, st.keys[j].data(), d, d);
      affine(tr.lifted[j].data(), pv + so.wv, nullptr, st.vals[j].data(), d, d);
      double dot = 0.0;
      for (int i = 0; i < d; ++i) dot += st.q[i] * st.keys[j][i];
      logits[j] = dot * attn_scale;
    }
    double max_logit = logits[0];
    for (const double l : logits) max_logit = std::max(max_logit, l);
    st.attn_w.resize(nv);
    double denom = 0.0;
    for (std::size_t j = 0; j < nv; ++j) {
      st.attn_w[j] = std::exp(logits[j] - max_logit);
      denom += st.attn_w[j];
    }
    for (double& w : st.attn_w) w /= denom;
    st.attn.assign(d, 0.0);
    for (std::size_t j = 0; j < nv; ++j) {
      for (int i = 0; i < d; ++i) st.attn[i] += st.attn_w[j] * st.vals[j][i];
    }

    st.h3.resize(d);
    for (int i = 0; i < d; ++i) st.h3[i] = st.h2[i] + st.attn[i];

    st.f1a.assign(2 * d, 0.0);
    affine(st.h3.data(), pv + so.f1w, pv + so.f1b, st.f1a.data(), d, 2 * d);
    st.f1.resize(2 * d);
    for (int i = 0; i < 2 * d; ++i) st.f1[i] = st.f1a[i] > 0.0 ? st.f1a[i] : 0.0;
    std::vector<double> f2(static_cast<std::size_t>(d), 0.0);
    affine(st.f1.data(), pv + so.f2w, pv + so.f2b, f2.data(), 2 * d, d);
    st.h4.resize(d);
    for (int i = 0; i < d; ++i) st.h4[i] = st.h3[i] + f2[i];

    std::vector<double> delta(static_cast<std::size_t>(io), 0.0);
    affine(st.h4.data(), pv + so.tw, pv + so.tb, delta.data(), d, io);
    st.out.x0_hat.resize(io);
    for (int i = 0; i < io; ++i) st.out.x0_hat[i] = st.u[i] + delta[i];
    double logit = pv[so.sb];
    for (int i = 0; i < d; ++i) logit += st.h4[i] * pv[so.sw + i];
    st.out.score_logit = logit;

    u = st.out.x0_hat;
    tr.stages.push_back(std::move(st));
  }
  return tr;
}

std::vector<StageOutput> forward(const DenoiserParams& params,
                                 std::span<const double> x_t, int t,
                                 const ContextTokens& ctx) {
  return forward_trace(params, x_t, t, ctx).outputs();
}

std::vector<double> backward_from_trace(const DenoiserParams& params,
                                        const ForwardTrace& trace,
                                        std::span<const StageUpstream> upstream) {
  const CascadeConfig& cfg = params.cfg;
  const int d = cfg.hidden;
  const int io = cfg.traj_dim();
  const int zin = io + cfg.t_embed;
  if (upstream.size() != trace.stages.size()) {
    throw std::invalid_argument("backward: need one upstream entry per stage");
  }
  for (const auto& up : upstream) {
    if (!up.d_x0_hat.empty() && static_cast<int>(up.d_x0_hat.size()) != io) {
      throw std::invalid_argument("backward: upstream x0_hat gradient length mismatch");
    }
  }
  const Layout lay = make_layout(cfg);
  const double* pv = params.values.data();
  std::vector<double> grad(params.values.size(), 0.0);
  double* gv = grad.data();

  const std::size_t nv = trace.valid_rows.size();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<std::vector<double>> d_lifted(nv,
                                            std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std::vector<double> d_et(cfg.t_embed, 0.0);
  std::vector<double> du(io, 0.0);  // gradient w.r.t. the next stage's input

  for (int m = cfg.stages - 1; m >= 0; --m) {
    const auto& st = trace.stages[m];
    const StageOffsets& so = lay.stage[m];

    std::vector<double> dx0 = du;
    if (!upstream[m].d_x0_hat.empty()) {
      for (int i = 0; i < io; ++i) dx0[i] += upstream[m].d_x0_hat[i];
    }
    const double dlogit = upstream[m].d_score_logit;

    // x0_hat = u + traj_head(h4); score = score_head(h4)
    std::vector<double> du_cur = dx0;
    std::vector<double> dh4(d, 0.0);
    grad_affine(st.h4.data(), dx0.data(), gv + so.tw, gv + so.tb, d, io);
    backprop_input(pv + so.tw, dx0.data(), dh4.data(), d, io);
    if (dlogit != 0.0) {
      for (int i = 0; i < d; ++i) gv[so.sw + i] += st.h4[i] * dlogit;
      gv[so.sb] += dlogit;
      for (int i = 0; i < d; ++i) dh4[i] += pv[so.sw + i] * dlogit;
    }

    // h4 = h3 + ffn2(relu(ffn1(h3)))
    std::vector<double> dh3 = dh4;
    std::vector<double> df1(2 * d, 0.0);
    grad_affine(st.f1.data(), dh4.data(), gv + so.f2w, gv + so.f2b, 2 * d, d);
    backprop_input(pv + so.f2w, dh4.data(), df1.data(), 2 * d, d);
    for (int i = 0; i < 2 * d; ++i) {
      if (st.f1a[i] <= 0.0) df1[i] = 0.0;
    }
    grad_affine(st.h3.data(), df1.data(), gv + so.f1w, gv + so.f1b, d, 2 * d);
    backprop_input(pv + so.f1w, df1.data(), dh3.data(), d, 2 * d);

    // h3 = h2 + attention
    std::vector<double> dh2 = dh3;
    const std::vector<double>& dattn = dh3;
    std::vector<double> dw(nv, 0.0);
    for (std::size_t j = 0; j < nv; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += st.vals[j][i] * dattn[i];
      dw[j] = acc;
      // dv_j = w_j * dattn
      std::vector<double> dv(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i) dv[i] = st.attn_w[j] * dattn[i];
      grad_affine(trace.lifted[j].data(), dv.data(), gv + so.wv, nullptr, d, d);
      backprop_input(pv + so.wv, dv.data(), d_lifted[j].data(), d, d);
    }
    double wsum = 0.0;
    for (std::size_t j = 0; j < nv; ++j) wsum += st.attn_w[j] * dw[j];
    std::vector<double> dq(d, 0.0);
    for (std::size_t j = 0; j < nv; ++j) {
      const double dlg = st.attn_w[j] * (dw[j] - wsum);
      for (int i = 0; i < d; ++i) dq[i] += dlg * st.keys[j][i] * attn_scale;
      std::vector<double> dk(static_cast<std::size_t>(d));
      for (int i = 0; i < d; ++i) dk[i] = dlg * st.q[i] * attn_scale;
      grad_affine(trace.lifted[j].data(), dk.data(), gv + so.wk, nullptr, d, d);
      backprop_input(pv + so.wk, dk.data(), d_lifted[j].data(), d, d);
    }
    grad_affine(st.h2.data(), dq.data(), gv + so.wq, nullptr, d, d);
    backprop_input(pv + so.wq, dq.data(), dh2.data(), d, d);

    // h2 = mlp_in2(relu(mlp_in1(z)))
    std::vector<double> dh1(d, 0.0);
    grad_affine(st.h1.data(), dh2.data(), gv + so.w2, gv + so.b2, d, d);
    backprop_input(pv + so.w2, dh2.data(), dh1.data(), d, d);
    for (int i = 0; i < d; ++i) {
      if (st.a1[i] <= 0.0) dh1[i] = 0.0;
    }
    std::vector<double> dz(zin, 0.0);
    grad_affine(st.z.data(), dh1.data(), gv + so.w1, gv + so.b1, zin, d);
    backprop_input(pv + so.w1, dh1.data(), dz.data(), zin, d);
    for (int i = 0; i < io; ++i) du_cur[i] += dz[i];
    for (int i = 0; i < cfg.t_embed; ++i) d_et[i] += dz[io + i];

    du = std::move(du_cur);
  }

  for (std::size_t j = 0; j < nv; ++j) {
    grad_affine(trace.ctx_rows[j].data(), d_lifted[j].data(), gv + lay.ctx_lift_w,
                gv + lay.ctx_lift_b, cfg.ctx_dim, d);
  }
  grad_affine(trace.e_raw.data(), d_et.data(), gv + lay.t_proj_w, gv + lay.t_proj_b,
              cfg.t_embed_raw, cfg.t_embed);

  return grad;
}

std::vector<double> backward(const DenoiserParams& params, std::span<const double> x_t,
                             int t, const ContextTokens& ctx,
                             std::span<const StageUpstream> upstream) {
  const ForwardTrace trace = forward_trace(params, x_t, t, ctx);
  return backward_from_trace(params, trace, upstream);
}

}  // namespace tdp
