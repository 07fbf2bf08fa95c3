// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soundit/tensor.hpp"

namespace soundit {

// Ordered registry of named trainable tensors. Registration order is the
// serialization order for checkpoints and the walk order for the optimizer.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor* find(const std::string& name);

    size_t size() const { return entries_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor& tensor(size_t i) { return tensors_[i]; }
    const Tensor& tensor(size_t i) const { return tensors_[i]; }

    int64_t total_params() const;
    // Sum of numel over params whose name starts with `prefix`.
    int64_t count_with_prefix(const std::string& prefix) const;
    // Sum over params whose name contains `needle`.
    int64_t count_containing(const std::string& needle) const;

    void zero_grad();
    bool grads_all_finite() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
    std::vector<size_t> entries_;  // kept for size(); mirrors names_
};

enum class Init { kXavier, kZero, kNormal02 };

Tensor make_param(ParamStore& store, const std::string& name, Shape shape, Init init, RandomStream& rng);

// Affine map y = x W + b with W stored (in, out). Works on rank-2 and rank-3
// inputs (tokens).
class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, RandomStream& rng,
           Init init = Init::kXavier, bool bias = true);

    Tensor forward(const Tensor& x) const;
    int64_t in_features() const { return in_; }
    int64_t out_features() const { return out_; }

private:
    Tensor weight_, bias_;
    int64_t in_ = 0, out_ = 0;
    bool has_bias_ = false;
};

// Scaled dot-product attention over pre-projected q/k/v, (B,Nq,D) x (B,Nk,D).
// Splits D into `heads`, attends per head, re-merges.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// Sinusoidal features for an integer timestep, dim must be even.
std::vector<double> sinusoidal_features(double t, int dim, double max_period = 10000.0);

// Fixed 2-D sin/cos positional table for a (gh x gw) token grid, shape (gh*gw, dim).
Tensor positional_table_2d(int gh, int gw, int dim);

// Timestep embedder: sinusoidal features -> MLP -> (B, dim) embedding.
class TimestepEmbedder {
public:
    TimestepEmbedder() = default;
    TimestepEmbedder(ParamStore& store, const std::string& prefix, int freq_dim, int dim, RandomStream& rng);
    Tensor forward(const std::vector<int>& t) const;

private:
    Linear fc1_, fc2_;
    int freq_dim_ = 0;
};

// Adam with fixed learning rate over a ParamStore.
class AdamOptimizer {
public:
    explicit AdamOptimizer(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8);

    void step();
    void zero_grad() { store_->zero_grad(); }
    int64_t step_count() const { return t_; }
    double learning_rate() const { return lr_; }

    // Flat state access for checkpointing; layout follows the store order.
    const std::vector<std::vector<double>>& m() const { return m_; }
    const std::vector<std::vector<double>>& v() const { return v_; }
    void restore(int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

private:
    ParamStore* store_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace soundit
