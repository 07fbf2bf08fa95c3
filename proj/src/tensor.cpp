// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#include "soundit/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace soundit {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

std::vector<int64_t> contiguous_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

[[noreturn]] void shape_fail(const std::string& what, const Shape& a, const Shape& b) {
    throw std::invalid_argument(what + ": " + shape_str(a) + " vs " + shape_str(b));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) shape_fail("incompatible broadcast", a, b);
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed through `out` (0 on broadcast axes).
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    const auto in_st = contiguous_strides(in);
    const size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i) {
        st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : in_st[i];
    }
    return st;
}

// Walks every index of `out_shape`, producing the flat offsets into two
// broadcast operands. fn(out_flat, a_off, b_off).
template <typename Fn>
void for_each_broadcast(const Shape& out_shape, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, Fn&& fn) {
    const int64_t n = shape_numel(out_shape);
    const int rank = static_cast<int>(out_shape.size());
    std::vector<int64_t> coord(rank, 0);
    int64_t a_off = 0, b_off = 0;
    for (int64_t i = 0; i < n; ++i) {
        fn(i, a_off, b_off);
        for (int d = rank - 1; d >= 0; --d) {
            coord[d]++;
            a_off += sa[d];
            b_off += sb[d];
            if (coord[d] < out_shape[d]) break;
            a_off -= sa[d] * out_shape[d];
            b_off -= sb[d] * out_shape[d];
            coord[d] = 0;
        }
    }
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw std::invalid_argument("from_data: " + shape_str(shape) + " does not hold " +
                                    std::to_string(data.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, RandomStream& rng, double stddev, bool requires_grad) {
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = rng.normal() * stddev;
    return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
int64_t Tensor::numel() const { return impl_->numel(); }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }
const std::vector<double>& Tensor::values() const { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " values");
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (idx.size() != impl_->shape.size()) throw std::invalid_argument("at(): rank mismatch");
    const auto st = contiguous_strides(impl_->shape);
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) off += i * st[d++];
    return impl_->data[static_cast<size_t>(off)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.size() != impl_->data.size()) {
        const_cast<TensorImpl*>(impl_.get())->ensure_grad();
    }
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
    for (double v : impl_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::backward() {
    if (numel() != 1) throw std::invalid_argument("backward() without seed needs a scalar");
    backward({1.0});
}

void Tensor::backward(const std::vector<double>& seed) {
    if (static_cast<int64_t>(seed.size()) != numel()) {
        throw std::invalid_argument("backward seed size mismatch");
    }
    // Post-order DFS, then run closures in reverse topological order.
    std::vector<TensorImpl*> topo;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            TensorImpl* p = node->parents[child++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    impl_->ensure_grad();
    for (size_t i = 0; i < seed.size(); ++i) impl_->grad[i] += seed[i];
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// Builds the result node; records the tape only when useful.
Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(TensorImpl*)> make_backward) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    bool track = false;
    if (g_grad_enabled) {
        for (const Tensor& p : parents) track = track || p.impl()->tracked();
    }
    if (track) {
        for (Tensor& p : parents) out.impl()->parents.push_back(p.impl());
        make_backward(out.impl().get());
    }
    return out;
}

// ---- elementwise binary -------------------------------------------------------

namespace {

// dfa/dfb: local partials as functions of (a_val, b_val, out_val).
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb, const char* name) {
    if (!a.defined() || !b.defined()) throw std::invalid_argument(std::string(name) + ": undefined tensor");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) {
        const int64_t n = a.numel();
        std::vector<double> out(static_cast<size_t>(n));
        const double* pa = a.data();
        const double* pb = b.data();
        for (int64_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
        return make_op_result(sa, std::move(out), {a, b}, [=](TensorImpl* o) {
            auto ia = o->parents[0];
            auto ib = o->parents[1];
            o->backward_fn = [o, ia, ib, dfa, dfb]() {
                const int64_t n = o->numel();
                const double* pa = ia->data.data();
                const double* pb = ib->data.data();
                const double* po = o->data.data();
                const double* g = o->grad.data();
                if (ia->tracked()) {
                    ia->ensure_grad();
                    for (int64_t i = 0; i < n; ++i) ia->grad[i] += g[i] * dfa(pa[i], pb[i], po[i]);
                }
                if (ib->tracked()) {
                    ib->ensure_grad();
                    for (int64_t i = 0; i < n; ++i) ib->grad[i] += g[i] * dfb(pa[i], pb[i], po[i]);
                }
            };
        });
    }
    const Shape out_shape = broadcast_shape(sa, sb);
    const auto stra = broadcast_strides(sa, out_shape);
    const auto strb = broadcast_strides(sb, out_shape);
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const double* pa = a.data();
    const double* pb = b.data();
    for_each_broadcast(out_shape, stra, strb, [&](int64_t i, int64_t oa, int64_t ob) {
        out[i] = f(pa[oa], pb[ob]);
    });
    return make_op_result(out_shape, std::move(out), {a, b}, [=](TensorImpl* o) {
        auto ia = o->parents[0];
        auto ib = o->parents[1];
        o->backward_fn = [o, ia, ib, stra, strb, out_shape, dfa, dfb]() {
            const double* pa = ia->data.data();
            const double* pb = ib->data.data();
            const double* po = o->data.data();
            const double* g = o->grad.data();
            const bool ta = ia->tracked();
            const bool tb = ib->tracked();
            if (ta) ia->ensure_grad();
            if (tb) ib->ensure_grad();
            for_each_broadcast(out_shape, stra, strb, [&](int64_t i, int64_t oa, int64_t ob) {
                if (ta) ia->grad[oa] += g[i] * dfa(pa[oa], pb[ob], po[i]);
                if (tb) ib->grad[ob] += g[i] * dfb(pa[oa], pb[ob], po[i]);
            });
        };
    });
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF df, const char* name) {
    if (!x.defined()) throw std::invalid_argument(std::string(name) + ": undefined tensor");
    const int64_t n = x.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* px = x.data();
    for (int64_t i = 0; i < n; ++i) out[i] = f(px[i]);
    return make_op_result(x.shape(), std::move(out), {x}, [=](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, df]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            const int64_t n = o->numel();
            const double* px = ix->data.data();
            const double* po = o->data.data();
            const double* g = o->grad.data();
            for (int64_t i = 0; i < n; ++i) ix->grad[i] += g[i] * df(px[i], po[i]);
        };
    });
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; }, "add");
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; }, "sub");
}

Tensor operator*(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; }, "mul");
}

Tensor operator/(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); }, "div");
}

Tensor operator+(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor operator-(const Tensor& a, double c) { return a + (-c); }

Tensor operator*(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x * c; }, [c](double, double) { return c; }, "mul_scalar");
}

Tensor operator*(double c, const Tensor& a) { return a * c; }
Tensor operator/(const Tensor& a, double c) { return a * (1.0 / c); }
Tensor operator-(const Tensor& a) { return a * -1.0; }

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor exp(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

Tensor softplus(const Tensor& x) {
    return unary_op(
        x,
        [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); }, "softplus");
}

Tensor silu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        },
        "silu");
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    return unary_op(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        },
        "gelu");
}

Tensor square(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, "square");
}

// ---- shape ops ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(x.values());
    return make_op_result(std::move(shape), std::move(out), {x}, [](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            for (int64_t i = 0; i < o->numel(); ++i) ix->grad[i] += o->grad[i];
        };
    });
}

namespace {

std::vector<double> permute_raw(const std::vector<double>& data, const Shape& shape,
                                const std::vector<int>& perm, Shape& out_shape) {
    const int rank = static_cast<int>(shape.size());
    out_shape.resize(rank);
    for (int i = 0; i < rank; ++i) out_shape[i] = shape[perm[i]];
    const auto in_st = contiguous_strides(shape);
    std::vector<int64_t> gather_st(rank);
    for (int i = 0; i < rank; ++i) gather_st[i] = in_st[perm[i]];
    const int64_t n = shape_numel(shape);
    std::vector<double> out(static_cast<size_t>(n));
    std::vector<int64_t> coord(rank, 0);
    int64_t in_off = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = data[static_cast<size_t>(in_off)];
        for (int d = rank - 1; d >= 0; --d) {
            coord[d]++;
            in_off += gather_st[d];
            if (coord[d] < out_shape[d]) break;
            in_off -= gather_st[d] * out_shape[d];
            coord[d] = 0;
        }
    }
    return out;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const int rank = x.rank();
    if (static_cast<int>(perm.size()) != rank) throw std::invalid_argument("permute: rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    for (int p : perm) {
        if (p < 0 || p >= rank || seen[static_cast<size_t>(p)]) throw std::invalid_argument("permute: bad axes");
        seen[static_cast<size_t>(p)] = true;
    }
    Shape out_shape;
    std::vector<double> out = permute_raw(x.values(), x.shape(), perm, out_shape);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return make_op_result(std::move(out_shape), std::move(out), {x}, [inv](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, inv]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            Shape back_shape;
            std::vector<double> gx = permute_raw(o->grad, o->shape, inv, back_shape);
            for (int64_t i = 0; i < ix->numel(); ++i) ix->grad[i] += gx[static_cast<size_t>(i)];
        };
    });
}

Tensor transpose_last(const Tensor& x) {
    std::vector<int> perm(static_cast<size_t>(x.rank()));
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    return permute(x, perm);
}

Tensor slice_last(const Tensor& x, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    const int64_t last = s.back();
    if (start < 0 || len <= 0 || start + len > last) throw std::invalid_argument("slice_last: bad range");
    Shape out_shape = s;
    out_shape.back() = len;
    const int64_t rows = x.numel() / last;
    std::vector<double> out(static_cast<size_t>(rows * len));
    const double* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        std::copy(px + r * last + start, px + r * last + start + len, out.begin() + r * len);
    }
    return make_op_result(std::move(out_shape), std::move(out), {x}, [start, len, last, rows](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, start, len, last, rows]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < len; ++j) {
                    ix->grad[static_cast<size_t>(r * last + start + j)] += o->grad[static_cast<size_t>(r * len + j)];
                }
            }
        };
    });
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool a3 = sa.size() == 3;
    const bool b3 = sb.size() == 3;
    if ((sa.size() != 2 && !a3) || (sb.size() != 2 && !b3) || (b3 && !a3)) {
        shape_fail("matmul: unsupported ranks", sa, sb);
    }
    const int64_t batch = a3 ? sa[0] : 1;
    const int64_t n = a3 ? sa[1] : sa[0];
    const int64_t k = a3 ? sa[2] : sa[1];
    const int64_t kb = b3 ? sb[1] : sb[0];
    const int64_t m = b3 ? sb[2] : sb[1];
    if (k != kb || (b3 && sb[0] != batch)) shape_fail("matmul: inner dims", sa, sb);

    Shape out_shape = a3 ? Shape{batch, n, m} : Shape{n, m};
    std::vector<double> out(static_cast<size_t>(batch * n * m));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < batch; ++i) {
        MapConst A(pa + i * n * k, n, k);
        MapConst B(pb + (b3 ? i * k * m : 0), k, m);
        MapMat C(out.data() + i * n * m, n, m);
        C.noalias() = A * B;
    }
    return make_op_result(std::move(out_shape), std::move(out), {a, b}, [=](TensorImpl* o) {
        auto ia = o->parents[0];
        auto ib = o->parents[1];
        o->backward_fn = [o, ia, ib, batch, n, k, m, b3]() {
            const double* pa = ia->data.data();
            const double* pb = ib->data.data();
            const double* g = o->grad.data();
            if (ia->tracked()) {
                ia->ensure_grad();
                for (int64_t i = 0; i < batch; ++i) {
                    MapConst G(g + i * n * m, n, m);
                    MapConst B(pb + (b3 ? i * k * m : 0), k, m);
                    MapMat dA(ia->grad.data() + i * n * k, n, k);
                    dA.noalias() += G * B.transpose();
                }
            }
            if (ib->tracked()) {
                ib->ensure_grad();
                for (int64_t i = 0; i < batch; ++i) {
                    MapConst G(g + i * n * m, n, m);
                    MapConst A(pa + i * n * k, n, k);
                    MapMat dB(ib->grad.data() + (b3 ? i * k * m : 0), k, m);
                    dB.noalias() += A.transpose() * G;
                }
            }
        };
    });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return make_op_result({1}, {acc}, {x}, [](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            const double g = o->grad[0];
            for (double& v : ix->grad) v += g;
        };
    });
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.numel())); }

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) shape_fail("mse_loss", pred.shape(), target.shape());
    return mean(square(pred - target));
}

// ---- normalization / attention helpers --------------------------------------

Tensor layer_norm(const Tensor& x, double eps) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    std::vector<double> out(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(r * d + j)] = (row[j] - mu) * is;
    }
    return make_op_result(x.shape(), std::move(out), {x}, [rows, d, inv_std](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, rows, d, inv_std]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            const double* y = o->data.data();
            const double* g = o->grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                const double is = (*inv_std)[static_cast<size_t>(r)];
                double mg = 0.0, mgy = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    mg += g[r * d + j];
                    mgy += g[r * d + j] * y[r * d + j];
                }
                mg /= static_cast<double>(d);
                mgy /= static_cast<double>(d);
                for (int64_t j = 0; j < d; ++j) {
                    ix->grad[static_cast<size_t>(r * d + j)] +=
                        is * (g[r * d + j] - mg - y[r * d + j] * mgy);
                }
            }
        };
    });
}

namespace {

Tensor softmax_impl(const Tensor& x, bool canonical_order) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.numel() / d;
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double* px = x.data();
    std::vector<double> scratch;
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double* orow = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) orow[j] = std::exp(row[j] - mx);
        double s = 0.0;
        if (canonical_order) {
            scratch.assign(orow, orow + d);
            std::sort(scratch.begin(), scratch.end());
            for (double v : scratch) s += v;
        } else {
            for (int64_t j = 0; j < d; ++j) s += orow[j];
        }
        for (int64_t j = 0; j < d; ++j) orow[j] /= s;
    }
    return make_op_result(x.shape(), std::move(out), {x}, [rows, d](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, rows, d]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            const double* y = o->data.data();
            const double* g = o->grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (int64_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                for (int64_t j = 0; j < d; ++j) {
                    ix->grad[static_cast<size_t>(r * d + j)] += y[r * d + j] * (g[r * d + j] - dot);
                }
            }
        };
    });
}

}  // namespace

Tensor softmax_last(const Tensor& x) { return softmax_impl(x, false); }

Tensor softmax_rows_canonical(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("softmax_rows_canonical expects rank 2");
    return softmax_impl(x, true);
}

// ---- indexed selection --------------------------------------------------------

Tensor gather_cols(const Tensor& x, const std::vector<int>& idx, int k) {
    if (x.rank() != 2) throw std::invalid_argument("gather_cols expects rank 2");
    const int64_t rows = x.dim(0);
    const int64_t cols = x.dim(1);
    if (static_cast<int64_t>(idx.size()) != rows * k) throw std::invalid_argument("gather_cols: idx size");
    std::vector<double> out(static_cast<size_t>(rows * k));
    const double* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        for (int j = 0; j < k; ++j) {
            const int c = idx[static_cast<size_t>(r * k + j)];
            if (c < 0 || c >= cols) throw std::invalid_argument("gather_cols: index out of range");
            out[static_cast<size_t>(r * k + j)] = px[r * cols + c];
        }
    }
    return make_op_result({rows, static_cast<int64_t>(k)}, std::move(out), {x}, [idx, rows, cols, k](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, idx, rows, cols, k]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int j = 0; j < k; ++j) {
                    ix->grad[static_cast<size_t>(r * cols + idx[static_cast<size_t>(r * k + j)])] +=
                        o->grad[static_cast<size_t>(r * k + j)];
                }
            }
        };
    });
}

Tensor scatter_cols(const Tensor& x, const std::vector<int>& idx, int64_t width) {
    if (x.rank() != 2) throw std::invalid_argument("scatter_cols expects rank 2");
    const int64_t rows = x.dim(0);
    const int64_t k = x.dim(1);
    if (static_cast<int64_t>(idx.size()) != rows * k) throw std::invalid_argument("scatter_cols: idx size");
    std::vector<double> out(static_cast<size_t>(rows * width), 0.0);
    const double* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < k; ++j) {
            const int c = idx[static_cast<size_t>(r * k + j)];
            if (c < 0 || c >= width) throw std::invalid_argument("scatter_cols: index out of range");
            out[static_cast<size_t>(r * width + c)] = px[r * k + j];
        }
    }
    return make_op_result({rows, width}, std::move(out), {x}, [idx, rows, k, width](TensorImpl* o) {
        auto ix = o->parents[0];
        o->backward_fn = [o, ix, idx, rows, k, width]() {
            if (!ix->tracked()) return;
            ix->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < k; ++j) {
                    ix->grad[static_cast<size_t>(r * k + j)] +=
                        o->grad[static_cast<size_t>(r * width + idx[static_cast<size_t>(r * k + j)])];
                }
            }
        };
    });
}

}  // namespace soundit
