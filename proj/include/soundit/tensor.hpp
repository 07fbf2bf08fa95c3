// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "soundit/rng.hpp"

namespace soundit {

// Dense double-precision tensor with reverse-mode autodiff.
//
// Tensors are handles onto shared storage; ops build a tape of parent links
// and backward closures. The tape is only recorded while grad mode is on and
// at least one operand participates in a graph, so pure inference on constant
// inputs allocates no graph at all.

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same numel as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void()> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool tracked() const { return requires_grad || !parents.empty(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, RandomStream& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int rank() const;
    int64_t dim(int i) const;

    double* data();
    const double* data() const;
    const std::vector<double>& values() const;
    double item() const;  // requires numel() == 1
    double at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    const std::vector<double>& grad() const;  // valid after backward()
    void zero_grad();

    // Runs reverse-mode accumulation from this (scalar) tensor.
    void backward();
    // Seeds with an explicit output gradient instead of 1.
    void backward(const std::vector<double>& seed);

    // Copy of the values with no graph attached.
    Tensor detach() const;

    std::shared_ptr<TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

    bool all_finite() const;

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_op_result(Shape shape, std::vector<double> data,
                                 std::vector<Tensor> parents,
                                 std::function<void(TensorImpl*)> make_backward);
};

// Grad-mode guard: while one is alive, ops do not record the tape.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// ---- elementwise / broadcasting ops --------------------------------------
// Binary ops broadcast numpy-style (right-aligned, size-1 dims stretch).

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double c);
Tensor operator-(const Tensor& a, double c);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);
Tensor operator/(const Tensor& a, double c);
Tensor operator-(const Tensor& a);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor square(const Tensor& x);

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose_last(const Tensor& x);
// Slice along the last axis: out[..., j] = x[..., start + j], j in [0, len).
Tensor slice_last(const Tensor& x, int64_t start, int64_t len);

// ---- matmul ----------------------------------------------------------------
// Supports (n,k)x(k,m), (B,n,k)x(k,m), (B,n,k)x(B,k,m).
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// ---- normalization / attention helpers -------------------------------------

// Per-row layer norm over the last axis, no affine parameters.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
// Softmax over the last axis (max-subtracted).
Tensor softmax_last(const Tensor& x);
// Rank-2 softmax whose exp-sum is accumulated in ascending value order, so the
// result is invariant under permutations of the columns. Used by MoE routing.
Tensor softmax_rows_canonical(const Tensor& x);

// ---- indexed selection (rank-2) ---------------------------------------------
// idx is row-major (rows() x k), entries in [0, cols(x)).
Tensor gather_cols(const Tensor& x, const std::vector<int>& idx, int k);
// Inverse: place (rows x k) values into a (rows x width) zero tensor.
Tensor scatter_cols(const Tensor& x, const std::vector<int>& idx, int64_t width);

}  // namespace soundit
