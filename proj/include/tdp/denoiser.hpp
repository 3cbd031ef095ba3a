#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tdp/world.hpp"

namespace tdp {

/// Shape of the cascade decoder. All dimensions are fixed per run and
/// serialized alongside the parameters.
struct CascadeConfig {
  int stages = 2;        // M
  int hidden = 64;       // d
  int t_embed = 16;      // d_t, projected timestep-embedding width
  int t_embed_raw = 16;  // raw sinusoidal width fed to the projection
  int horizon = 8;       // H waypoints, network I/O width 2H
  int ctx_dim = ContextTokens::kDim;
  int ctx_tokens = ContextTokens::kMaxTokens;

  int traj_dim() const { return 2 * horizon; }
};

/// One named contiguous range of the flat parameter vector. `fan_in` and
/// `fan_out` drive the init scaling; bias slices carry fan_in = 0.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  int fan_in = 0;
  int fan_out = 0;
};

/// Slice table tiling the parameter vector exactly: the two shared blocks
/// (context lift, timestep projection) first, then each stage's blocks in
/// evaluation order.
std::vector<ParamSlice> param_layout(const CascadeConfig& cfg);
std::size_t param_count(const CascadeConfig& cfg);

struct DenoiserParams {
  CascadeConfig cfg;
  std::vector<double> values;
};

struct StageOutput {
  std::vector<double> x0_hat;  // 2H
  double score_logit = 0.0;
};

/// Loss partials with respect to one stage's outputs.
struct StageUpstream {
  std::vector<double> d_x0_hat;  // 2H, may be empty for "no gradient"
  double d_score_logit = 0.0;
};

/// Sinusoidal embedding: pairs [sin(t * f_i), cos(t * f_i)] with
/// f_i = 10000^(-2i/dim) for i = 0..dim/2-1.
std::vector<double> time_embed(int t, int dim);

/// All intermediate activations of one forward evaluation, kept so the
/// reverse sweep does not recompute the network.
struct ForwardTrace {
  std::vector<double> x_t;
  int t = 0;
  std::vector<int> valid_rows;              // indices of unmasked tokens
  std::vector<double> e_raw;                  // d_t_raw
  std::vector<double> e_t;                    // d_t
  std::vector<std::vector<double>> ctx_rows;  // per valid row, raw d_ctx
  std::vector<std::vector<double>> lifted;    // per valid row, d

  struct Stage {
    std::vector<double> u;     // stage input, 2H
    std::vector<double> z;     // [u ; e_t]
    std::vector<double> a1;    // pre-ReLU, d
    std::vector<double> h1;    // d
    std::vector<double> h2;    // d
    std::vector<double> q;     // d
    std::vector<std::vector<double>> keys;    // per valid row, d
    std::vector<std::vector<double>> vals;    // per valid row, d
    std::vector<double> attn_w;               // softmax weights per valid row
    std::vector<double> attn;  // d
    std::vector<double> h3;    // d
    std::vector<double> f1a;   // pre-ReLU, 2d
    std::vector<double> f1;    // 2d
    std::vector<double> h4;    // d
    StageOutput out;
  };
  std::vector<Stage> stages;

  std::vector<StageOutput> outputs() const {
    std::vector<StageOutput> outs;
    outs.reserve(stages.size());
    for (const auto& s : stages) outs.push_back(s.out);
    return outs;
  }
};

/// Glorot-uniform weights, zero biases, trajectory heads scaled by 0.01 so
/// the cascade starts near the identity.
DenoiserParams init_params(const CascadeConfig& cfg, std::uint64_t seed);

ForwardTrace forward_trace(const DenoiserParams& params,
                           std::span<const double> x_t, int t,
                           const ContextTokens& ctx);

std::vector<StageOutput> forward(const DenoiserParams& params,
                                 std::span<const double> x_t, int t,
                                 const ContextTokens& ctx);

/// Reverse-mode gradient for the scalar loss whose per-stage output partials
/// are `upstream` (one entry per stage). Includes the cascade path through
/// each stage's input.
std::vector<double> backward_from_trace(const DenoiserParams& params,
                                        const ForwardTrace& trace,
                                        std::span<const StageUpstream> upstream);

std::vector<double> backward(const DenoiserParams& params,
                             std::span<const double> x_t, int t,
                             const ContextTokens& ctx,
                             std::span<const StageUpstream> upstream);

}  // namespace tdp
