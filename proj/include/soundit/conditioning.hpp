// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "soundit/conditions.hpp"
#include "soundit/nn.hpp"
#include "soundit/tensor.hpp"

namespace soundit {

// ---- Scene low-rank content mixer -------------------------------------------
//
// Adds a rank-r residual path whose per-channel gate and per-sample strength
// are driven by the scene embedding:
//   x' = x + s(e_c) * LN(x) W_q Diag(tanh(phi(e_c))) W_v
//   s(e_c) = softplus-gain(e_c) * mu * tanh(alpha)
// alpha starts at 0, so the module is an exact identity at initialization.
// The D x D operator is never materialized; both products stay rank-r.

struct SlrcmConfig {
    int64_t dim = 0;       // token width D
    int64_t cond_dim = 0;  // scene embedding width D_c
    int64_t rank = 0;      // r, low-rank width
    double mu = 1.0;       // global guidance scalar
};

class SceneLowRankMixer {
public:
    SceneLowRankMixer() = default;
    SceneLowRankMixer(ParamStore& store, const std::string& prefix, const SlrcmConfig& cfg,
                      RandomStream& rng);

    // x (B,N,D), e_c (B,D_c) -> (B,N,D)
    Tensor forward(const Tensor& x, const Tensor& e_c) const;

    const Tensor& alpha() const { return alpha_; }

private:
    SlrcmConfig cfg_;
    Tensor w_q_, w_v_, alpha_;
    Linear phi_, gain_;
};

// ---- MoE soundscape conditioning ---------------------------------------------
//
// Cross-attention with M experts sharing one K/V projection of the soundscape
// tokens while each expert owns a low-rank query. A routed top-k soft mixture
// of expert outputs is added back through a per-sample tanh gate that starts
// at zero.

struct MoEConfig {
    int64_t dim = 0;        // token width D
    int64_t token_dim = 0;  // soundscape token width D_s
    int64_t embed_dim = 0;  // pooled soundscape width d
    int experts = 0;        // M
    int64_t query_rank = 0; // r_q
    int top_k = 0;          // k
    int heads = 0;
    double route_tau = 1.0; // routing temperature, fixed
};

// Per-call instrumentation: how many K/V projections and expert evaluations
// the last forward performed.
struct MoECallStats {
    int kv_projections = 0;
    int expert_evaluations = 0;
};

class MoESoundscapeConditioner {
public:
    MoESoundscapeConditioner() = default;
    MoESoundscapeConditioner(ParamStore& store, const std::string& prefix, const MoEConfig& cfg,
                             RandomStream& rng);

    // Routing weights (B, M); each row is a probability vector.
    Tensor route(const Tensor& e_s, const Tensor& e_t) const;

    // x (B,N,D), tokens (B,L,D_s), e_s (B,d), e_t (B,D) -> (B,N,D)
    Tensor forward(const Tensor& x, const SoundscapeCondition& sound, const Tensor& e_t) const;

    const MoECallStats& last_stats() const { return stats_; }
    const MoEConfig& config() const { return cfg_; }

private:
    MoEConfig cfg_;
    Tensor w_k_, w_v_, w_o_;
    std::vector<Tensor> wq_down_, wq_up_;
    Tensor prototypes_;    // (d, M)
    Linear time_proj_;     // D -> d, no bias
    Tensor mix_temp_raw_;  // (M); tau_m = softplus(raw), init at softplus^-1(1)
    Linear gate_proj_;     // d -> 1, zero init
    mutable MoECallStats stats_;
};

// Top-k per row of a (B, M) weight matrix: indices ordered by descending
// weight, ties broken by ascending index. Returns row-major (B*k).
std::vector<int> top_k_rows(const Tensor& w, int k);

// ---- S-AdaLN + pointwise feed-forward ----------------------------------------
//
// AdaLN-Zero extended with a bounded scene mix: modulation is
// branch_t(e_t) + tanh(lambda) * branch_c(e_c), applied around the FFN with a
// zero-initialized gate. lambda starts at 0, making the scene branch inert.

struct SAdaLnConfig {
    int64_t dim = 0;
    int64_t cond_dim = 0;  // D_c
    int64_t hidden = 0;    // FFN hidden width
};

class SceneAdaLnFfn {
public:
    SceneAdaLnFfn() = default;
    SceneAdaLnFfn(ParamStore& store, const std::string& prefix, const SAdaLnConfig& cfg, RandomStream& rng);

    // use_scene = false drops the scene branch entirely (timestep-only path).
    Tensor forward(const Tensor& x, const Tensor& e_t, const Tensor& e_c, bool use_scene = true) const;

private:
    SAdaLnConfig cfg_;
    Linear t_mod_;   // D -> 3D (scale, shift, gate), zero init
    Linear c_mod_;   // D_c -> 2D (scale, shift), zero init
    Tensor lambda_;  // bounded-mixing scalar, init 0
    Linear fc1_, fc2_;
};

// ---- AdaLN-Zero self-attention ------------------------------------------------
//
// Standard DiT stage: LN -> scale/shift from e_t -> multi-head self-attention
// -> zero-initialized gate on the residual.

class AdaLnZeroAttention {
public:
    AdaLnZeroAttention() = default;
    AdaLnZeroAttention(ParamStore& store, const std::string& prefix, int64_t dim, int heads,
                       RandomStream& rng);

    Tensor forward(const Tensor& x, const Tensor& e_t) const;

private:
    Linear mod_;  // D -> 3D, zero init
    Linear qkv_, out_;
    int heads_ = 0;
};

}  // namespace soundit
