// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#include "soundit/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace soundit {

namespace {

void check_tokens(const Tensor& x, int64_t dim, const char* who) {
    if (x.rank() != 3 || x.dim(2) != dim) {
        throw std::invalid_argument(std::string(who) + ": expected (B,N," + std::to_string(dim) +
                                    ") tokens, got " + shape_str(x.shape()));
    }
}

void check_embed(const Tensor& e, int64_t dim, const char* who) {
    if (e.rank() != 2 || e.dim(1) != dim) {
        throw std::invalid_argument(std::string(who) + ": expected (B," + std::to_string(dim) +
                                    ") embedding, got " + shape_str(e.shape()));
    }
}

}  // namespace

// ---- SceneLowRankMixer --------------------------------------------------------

SceneLowRankMixer::SceneLowRankMixer(ParamStore& store, const std::string& prefix, const SlrcmConfig& cfg,
                                     RandomStream& rng)
    : cfg_(cfg) {
    if (cfg.rank < 1 || cfg.rank > cfg.dim) {
        throw std::invalid_argument("slrcm: rank must lie in [1, dim]");
    }
    w_q_ = make_param(store, prefix + ".w_q", {cfg.dim, cfg.rank}, Init::kXavier, rng);
    w_v_ = make_param(store, prefix + ".w_v", {cfg.rank, cfg.dim}, Init::kXavier, rng);
    phi_ = Linear(store, prefix + ".phi", cfg.cond_dim, cfg.rank, rng);
    gain_ = Linear(store, prefix + ".gain", cfg.cond_dim, 1, rng);
    alpha_ = make_param(store, prefix + ".alpha", {1}, Init::kZero, rng);
}

Tensor SceneLowRankMixer::forward(const Tensor& x, const Tensor& e_c) const {
    check_tokens(x, cfg_.dim, "slrcm");
    check_embed(e_c, cfg_.cond_dim, "slrcm scene embedding");
    const int64_t B = x.dim(0);

    Tensor gate = reshape(tanh(phi_.forward(e_c)), {B, 1, cfg_.rank});
    Tensor low = matmul(layer_norm(x), w_q_);            // (B,N,r)
    Tensor path = matmul(low * gate, w_v_);              // (B,N,D)
    Tensor strength = softplus(gain_.forward(e_c)) * cfg_.mu * tanh(alpha_);
    return x + path * reshape(strength, {B, 1, 1});
}

// ---- MoESoundscapeConditioner ----------------------------------------------------

MoESoundscapeConditioner::MoESoundscapeConditioner(ParamStore& store, const std::string& prefix,
                                                   const MoEConfig& cfg, RandomStream& rng)
    : cfg_(cfg) {
    if (cfg.experts < 1) throw std::invalid_argument("moe: need at least one expert");
    if (cfg.top_k < 1 || cfg.top_k > cfg.experts) {
        throw std::invalid_argument("moe: top_k must lie in [1, experts]");
    }
    if (cfg.heads <= 0 || cfg.dim % cfg.heads != 0) {
        throw std::invalid_argument("moe: heads must divide token width");
    }
    if (cfg.route_tau <= 0.0) throw std::invalid_argument("moe: routing temperature must be positive");

    w_k_ = make_param(store, prefix + ".w_k", {cfg.token_dim, cfg.dim}, Init::kXavier, rng);
    w_v_ = make_param(store, prefix + ".w_v", {cfg.token_dim, cfg.dim}, Init::kXavier, rng);
    w_o_ = make_param(store, prefix + ".w_o", {cfg.dim, cfg.dim}, Init::kXavier, rng);
    wq_down_.reserve(static_cast<size_t>(cfg.experts));
    wq_up_.reserve(static_cast<size_t>(cfg.experts));
    for (int m = 0; m < cfg.experts; ++m) {
        const std::string e = prefix + ".expert" + std::to_string(m);
        wq_down_.push_back(make_param(store, e + ".wq_down", {cfg.dim, cfg.query_rank}, Init::kXavier, rng));
        wq_up_.push_back(make_param(store, e + ".wq_up", {cfg.query_rank, cfg.dim}, Init::kXavier, rng));
    }
    prototypes_ = make_param(store, prefix + ".prototypes", {cfg.embed_dim, static_cast<int64_t>(cfg.experts)},
                             Init::kNormal02, rng);
    time_proj_ = Linear(store, prefix + ".time_proj", cfg.dim, cfg.embed_dim, rng, Init::kXavier,
                        /*bias=*/false);
    // softplus(raw) = 1  =>  raw = log(e - 1)
    mix_temp_raw_ = make_param(store, prefix + ".mix_temp_raw", {static_cast<int64_t>(cfg.experts)},
                               Init::kZero, rng);
    std::fill_n(mix_temp_raw_.data(), cfg.experts, std::log(std::exp(1.0) - 1.0));
    gate_proj_ = Linear(store, prefix + ".gate_proj", cfg.embed_dim, 1, rng, Init::kZero);
}

Tensor MoESoundscapeConditioner::route(const Tensor& e_s, const Tensor& e_t) const {
    check_embed(e_s, cfg_.embed_dim, "moe route e_s");
    const int64_t B = e_s.dim(0);
    Tensor shift = time_proj_.forward(e_t);                              // (B,d)
    Tensor ones = Tensor::full({cfg_.embed_dim, 1}, 1.0);
    Tensor time_dot = matmul(e_s * shift, ones);                         // (B,1)
    Tensor logits = (matmul(e_s, prototypes_) + time_dot) * (1.0 / cfg_.route_tau);
    (void)B;
    return softmax_rows_canonical(logits);
}

std::vector<int> top_k_rows(const Tensor& w, int k) {
    if (w.rank() != 2) throw std::invalid_argument("top_k_rows expects rank 2");
    const int64_t B = w.dim(0);
    const int64_t M = w.dim(1);
    if (k < 1 || k > M) throw std::invalid_argument("top_k_rows: bad k");
    std::vector<int> out(static_cast<size_t>(B * k));
    std::vector<int> order(static_cast<size_t>(M));
    const double* p = w.data();
    for (int64_t b = 0; b < B; ++b) {
        std::iota(order.begin(), order.end(), 0);
        const double* row = p + b * M;
        std::stable_sort(order.begin(), order.end(), [row](int i, int j) { return row[i] > row[j]; });
        for (int j = 0; j < k; ++j) out[static_cast<size_t>(b * k + j)] = order[static_cast<size_t>(j)];
    }
    return out;
}

Tensor MoESoundscapeConditioner::forward(const Tensor& x, const SoundscapeCondition& sound,
                                         const Tensor& e_t) const {
    check_tokens(x, cfg_.dim, "moe");
    check_tokens(sound.s_tokens, cfg_.token_dim, "moe soundscape tokens");
    check_embed(sound.e_s, cfg_.embed_dim, "moe e_s");
    const int64_t B = x.dim(0);
    const int M = cfg_.experts;
    const int k = cfg_.top_k;

    stats_ = MoECallStats{};

    // Shared K/V: projected exactly once per call, reused by every expert.
    Tensor keys = matmul(sound.s_tokens, w_k_);
    Tensor vals = matmul(sound.s_tokens, w_v_);
    stats_.kv_projections = 1;

    Tensor xn = layer_norm(x);
    std::vector<Tensor> expert_out(static_cast<size_t>(M));
    for (int m = 0; m < M; ++m) {
        Tensor q = matmul(matmul(xn, wq_down_[static_cast<size_t>(m)]), wq_up_[static_cast<size_t>(m)]);
        expert_out[static_cast<size_t>(m)] =
            matmul(multi_head_attention(q, keys, vals, cfg_.heads), w_o_);
        stats_.expert_evaluations++;
    }

    Tensor w = route(sound.e_s, e_t);                       // (B,M)
    const std::vector<int> idx = top_k_rows(w, k);          // selection by value, tie -> low index

    // Renormalize the selected weights with per-expert mixing temperatures.
    Tensor tau = softplus(mix_temp_raw_);                   // (M)
    Tensor tau_rows = Tensor::zeros({B, static_cast<int64_t>(M)}) + reshape(tau, {1, static_cast<int64_t>(M)});
    Tensor sel_w = gather_cols(w, idx, k);                  // (B,k), rank-ordered
    Tensor sel_tau = gather_cols(tau_rows, idx, k);
    Tensor mix = softmax_last(sel_w / sel_tau);             // (B,k)

    // Aggregate in selection-rank order so the result is independent of how
    // experts are numbered.
    Tensor acc = Tensor::zeros({B, static_cast<int64_t>(x.dim(1)), cfg_.dim});
    for (int j = 0; j < k; ++j) {
        Tensor wj = reshape(slice_last(mix, j, 1), {B, 1, 1});
        for (int m = 0; m < M; ++m) {
            std::vector<double> mask(static_cast<size_t>(B), 0.0);
            bool any = false;
            for (int64_t b = 0; b < B; ++b) {
                if (idx[static_cast<size_t>(b * k + j)] == m) {
                    mask[static_cast<size_t>(b)] = 1.0;
                    any = true;
                }
            }
            if (!any) continue;
            Tensor mask_t = Tensor::from_data({B, 1, 1}, std::move(mask));
            acc = acc + (wj * mask_t) * expert_out[static_cast<size_t>(m)];
        }
    }

    Tensor gamma = reshape(tanh(gate_proj_.forward(sound.e_s)), {B, 1, 1});
    return x + gamma * acc;
}

// ---- SceneAdaLnFfn ---------------------------------------------------------------

SceneAdaLnFfn::SceneAdaLnFfn(ParamStore& store, const std::string& prefix, const SAdaLnConfig& cfg,
                             RandomStream& rng)
    : cfg_(cfg) {
    t_mod_ = Linear(store, prefix + ".t_mod", cfg.dim, 3 * cfg.dim, rng, Init::kZero);
    c_mod_ = Linear(store, prefix + ".c_mod", cfg.cond_dim, 2 * cfg.dim, rng, Init::kZero);
    lambda_ = make_param(store, prefix + ".lambda", {1}, Init::kZero, rng);
    fc1_ = Linear(store, prefix + ".fc1", cfg.dim, cfg.hidden, rng);
    fc2_ = Linear(store, prefix + ".fc2", cfg.hidden, cfg.dim, rng);
}

Tensor SceneAdaLnFfn::forward(const Tensor& x, const Tensor& e_t, const Tensor& e_c, bool use_scene) const {
    check_tokens(x, cfg_.dim, "s_adaln");
    const int64_t B = x.dim(0);
    const int64_t D = cfg_.dim;

    Tensor tm = t_mod_.forward(silu(e_t));  // (B,3D)
    Tensor scale = slice_last(tm, 0, D);
    Tensor shift = slice_last(tm, D, D);
    Tensor gate = slice_last(tm, 2 * D, D);
    if (use_scene) {
        check_embed(e_c, cfg_.cond_dim, "s_adaln scene embedding");
        Tensor cm = c_mod_.forward(silu(e_c));  // (B,2D)
        Tensor mix = tanh(lambda_);
        scale = scale + mix * slice_last(cm, 0, D);
        shift = shift + mix * slice_last(cm, D, D);
    }
    Tensor h = layer_norm(x) * (reshape(scale, {B, 1, D}) + 1.0) + reshape(shift, {B, 1, D});
    Tensor y = fc2_.forward(gelu(fc1_.forward(h)));
    return x + reshape(gate, {B, 1, D}) * y;
}

// ---- AdaLnZeroAttention ------------------------------------------------------------

AdaLnZeroAttention::AdaLnZeroAttention(ParamStore& store, const std::string& prefix, int64_t dim, int heads,
                                       RandomStream& rng)
    : heads_(heads) {
    if (heads <= 0 || dim % heads != 0) {
        throw std::invalid_argument("adaln attention: heads must divide token width");
    }
    mod_ = Linear(store, prefix + ".mod", dim, 3 * dim, rng, Init::kZero);
    qkv_ = Linear(store, prefix + ".qkv", dim, 3 * dim, rng);
    out_ = Linear(store, prefix + ".out", dim, dim, rng);
}

Tensor AdaLnZeroAttention::forward(const Tensor& x, const Tensor& e_t) const {
    const int64_t B = x.dim(0);
    const int64_t D = x.dim(2);
    Tensor m = mod_.forward(silu(e_t));
    Tensor scale = reshape(slice_last(m, 0, D), {B, 1, D});
    Tensor shift = reshape(slice_last(m, D, D), {B, 1, D});
    Tensor gate = reshape(slice_last(m, 2 * D, D), {B, 1, D});

    Tensor h = layer_norm(x) * (scale + 1.0) + shift;
    Tensor qkv = qkv_.forward(h);
    Tensor q = slice_last(qkv, 0, D);
    Tensor k = slice_last(qkv, D, D);
    Tensor v = slice_last(qkv, 2 * D, D);
    Tensor attn = out_.forward(multi_head_attention(q, k, v, heads_));
    return x + gate * attn;
}

}  // namespace soundit
