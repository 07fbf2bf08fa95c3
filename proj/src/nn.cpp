// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#include "soundit/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace soundit {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    names_.push_back(name);
    tensors_.push_back(std::move(t));
    entries_.push_back(entries_.size());
    return tensors_.back();
}

Tensor* ParamStore::find(const std::string& name) {
    for (size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return &tensors_[i];
    }
    return nullptr;
}

int64_t ParamStore::total_params() const {
    int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.numel();
    return n;
}

int64_t ParamStore::count_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (size_t i = 0; i < names_.size(); ++i) {
        if (names_[i].rfind(prefix, 0) == 0) n += tensors_[i].numel();
    }
    return n;
}

int64_t ParamStore::count_containing(const std::string& needle) const {
    int64_t n = 0;
    for (size_t i = 0; i < names_.size(); ++i) {
        if (names_[i].find(needle) != std::string::npos) n += tensors_[i].numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (Tensor& t : tensors_) t.zero_grad();
}

bool ParamStore::grads_all_finite() const {
    for (const Tensor& t : tensors_) {
        for (double g : t.grad()) {
            if (!std::isfinite(g)) return false;
        }
    }
    return true;
}

Tensor make_param(ParamStore& store, const std::string& name, Shape shape, Init init, RandomStream& rng) {
    Tensor t;
    switch (init) {
        case Init::kZero:
            t = Tensor::zeros(shape);
            break;
        case Init::kNormal02:
            t = Tensor::randn(shape, rng, 0.02);
            break;
        case Init::kXavier: {
            // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
            const int64_t fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape.back();
            const int64_t fan_out = shape.back();
            const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
            for (double& v : data) v = (2.0 * rng.uniform() - 1.0) * a;
            t = Tensor::from_data(shape, std::move(data));
            break;
        }
    }
    return store.add(name, std::move(t));
}

Linear::Linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, RandomStream& rng,
               Init init, bool bias)
    : in_(in), out_(out), has_bias_(bias) {
    weight_ = make_param(store, prefix + ".weight", {in, out}, init, rng);
    if (bias) bias_ = make_param(store, prefix + ".bias", {out}, Init::kZero, rng);
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.shape().back() != in_) {
        throw std::invalid_argument("Linear: input width " + std::to_string(x.shape().back()) +
                                    " != " + std::to_string(in_));
    }
    Tensor y = matmul(x, weight_);
    if (has_bias_) y = y + bias_;
    return y;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        throw std::invalid_argument("multi_head_attention expects rank-3 inputs");
    }
    const int64_t B = q.dim(0), Nq = q.dim(1), D = q.dim(2);
    const int64_t Nk = k.dim(1);
    if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != D || v.dim(2) != D || v.dim(1) != Nk) {
        throw std::invalid_argument("multi_head_attention: q/k/v shapes inconsistent");
    }
    if (heads <= 0 || D % heads != 0) {
        throw std::invalid_argument("multi_head_attention: heads must divide feature dim");
    }
    const int64_t Dh = D / heads;
    auto split = [&](const Tensor& x, int64_t N) {
        return reshape(permute(reshape(x, {B, N, heads, Dh}), {0, 2, 1, 3}), {B * heads, N, Dh});
    };
    Tensor qh = split(q, Nq);
    Tensor kh = split(k, Nk);
    Tensor vh = split(v, Nk);
    Tensor scores = matmul(qh, transpose_last(kh)) * (1.0 / std::sqrt(static_cast<double>(Dh)));
    Tensor attn = softmax_last(scores);
    Tensor out = matmul(attn, vh);
    return reshape(permute(reshape(out, {B, heads, Nq, Dh}), {0, 2, 1, 3}), {B, Nq, D});
}

std::vector<double> sinusoidal_features(double t, int dim, double max_period) {
    if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_features: dim must be even");
    std::vector<double> out(static_cast<size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / half);
        out[static_cast<size_t>(i)] = std::cos(t * freq);
        out[static_cast<size_t>(half + i)] = std::sin(t * freq);
    }
    return out;
}

Tensor positional_table_2d(int gh, int gw, int dim) {
    if (dim % 4 != 0) throw std::invalid_argument("positional_table_2d: dim must be divisible by 4");
    const int quarter = dim / 4;
    std::vector<double> data(static_cast<size_t>(gh) * gw * dim);
    for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
            double* row = data.data() + (static_cast<size_t>(y) * gw + x) * dim;
            for (int i = 0; i < quarter; ++i) {
                const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / quarter);
                row[i] = std::sin(y * freq);
                row[quarter + i] = std::cos(y * freq);
                row[2 * quarter + i] = std::sin(x * freq);
                row[3 * quarter + i] = std::cos(x * freq);
            }
        }
    }
    return Tensor::from_data({static_cast<int64_t>(gh) * gw, dim}, std::move(data));
}

TimestepEmbedder::TimestepEmbedder(ParamStore& store, const std::string& prefix, int freq_dim, int dim,
                                   RandomStream& rng)
    : freq_dim_(freq_dim) {
    fc1_ = Linear(store, prefix + ".fc1", freq_dim, dim, rng);
    fc2_ = Linear(store, prefix + ".fc2", dim, dim, rng);
}

Tensor TimestepEmbedder::forward(const std::vector<int>& t) const {
    const int64_t B = static_cast<int64_t>(t.size());
    std::vector<double> data(static_cast<size_t>(B * freq_dim_));
    for (int64_t b = 0; b < B; ++b) {
        auto feats = sinusoidal_features(static_cast<double>(t[static_cast<size_t>(b)]), freq_dim_);
        std::copy(feats.begin(), feats.end(), data.begin() + b * freq_dim_);
    }
    Tensor x = Tensor::from_data({B, freq_dim_}, std::move(data));
    return fc2_.forward(silu(fc1_.forward(x)));
}

AdamOptimizer::AdamOptimizer(ParamStore& store, double lr, double beta1, double beta2, double eps)
    : store_(&store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(store.size());
    v_.resize(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        m_[i].assign(static_cast<size_t>(store.tensor(i).numel()), 0.0);
        v_[i].assign(static_cast<size_t>(store.tensor(i).numel()), 0.0);
    }
}

void AdamOptimizer::step() {
    t_++;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < store_->size(); ++i) {
        Tensor& p = store_->tensor(i);
        const std::vector<double>& g = p.grad();
        double* w = p.data();
        for (size_t j = 0; j < g.size(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            const double mh = m_[i][j] / bc1;
            const double vh = v_[i][j] / bc2;
            w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void AdamOptimizer::restore(int64_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw std::invalid_argument("optimizer state does not match parameter layout");
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace soundit
