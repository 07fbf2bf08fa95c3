// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: central-difference gradient checking and small
// deterministic data generators. Everything here is oracle-side code and must
// not call back into the paths it is used to verify.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "soundit/nn.hpp"
#include "soundit/tensor.hpp"

namespace soundit::testing {

struct GradCheckReport {
    double worst = 0.0;          // largest relative error seen
    double frac_ok = 1.0;        // fraction of elements below rel_threshold
    int64_t checked = 0;
    std::string worst_param;
    int64_t worst_index = -1;

    bool passes(double worst_threshold, double min_frac) const {
        return checked > 0 && frac_ok >= min_frac && worst < worst_threshold;
    }
};

// Relative error with an absolute floor: elements whose true gradient is
// structurally ~0 compare against the floor instead of each other.
inline double relative_error(double a, double n, double floor = 1e-4) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central-difference check of every element of every parameter in `store`
// against the tape gradient of the scalar loss built by `loss_fn`.
// `loss_fn` must be a pure function of the current parameter values.
inline GradCheckReport check_gradients(ParamStore& store, const std::function<Tensor()>& loss_fn,
                                       double h = 1e-5, double rel_threshold = 1e-4) {
    GradCheckReport report;
    store.zero_grad();
    Tensor loss = loss_fn();
    loss.backward();

    std::vector<std::vector<double>> analytic(store.size());
    for (size_t i = 0; i < store.size(); ++i) analytic[i] = store.tensor(i).grad();

    int64_t ok = 0;
    for (size_t i = 0; i < store.size(); ++i) {
        Tensor& p = store.tensor(i);
        double* w = p.data();
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double saved = w[j];
            w[j] = saved + h;
            const double up = loss_fn().item();
            w[j] = saved - h;
            const double down = loss_fn().item();
            w[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = relative_error(analytic[i][static_cast<size_t>(j)], numeric);
            report.checked++;
            if (err <= rel_threshold) ok++;
            if (err > report.worst) {
                report.worst = err;
                report.worst_param = store.name(i);
                report.worst_index = j;
            }
        }
    }
    report.frac_ok = report.checked ? static_cast<double>(ok) / static_cast<double>(report.checked) : 1.0;
    return report;
}

// Same check for a set of free leaf tensors instead of a ParamStore.
inline GradCheckReport check_gradients(std::vector<Tensor>& leaves, const std::function<Tensor()>& loss_fn,
                                       double h = 1e-5, double rel_threshold = 1e-4) {
    ParamStore store;
    std::vector<Tensor> registered;
    for (size_t i = 0; i < leaves.size(); ++i) {
        leaves[i].set_requires_grad(true);
        store.add("leaf" + std::to_string(i), leaves[i]);
    }
    return check_gradients(store, loss_fn, h, rel_threshold);
}

inline bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (pa[i] != pb[i]) return false;
    }
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
    return worst;
}

inline double l2_distance(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    return std::sqrt(acc);
}

// Perturbs every parameter with seeded Gaussian noise so zero-initialized
// gates stop masking downstream paths during gradient checks.
inline void jitter_params(ParamStore& store, uint64_t seed, double stddev = 0.3) {
    RandomStream rng(seed);
    for (size_t i = 0; i < store.size(); ++i) {
        double* w = store.tensor(i).data();
        for (int64_t j = 0; j < store.tensor(i).numel(); ++j) w[j] += rng.normal() * stddev;
    }
}

}  // namespace soundit::testing
