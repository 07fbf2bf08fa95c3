// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "soundit/conditions.hpp"
#include "soundit/rng.hpp"
#include "soundit/tensor.hpp"

namespace soundit {

// Discrete noise schedule over T steps. Timesteps are 1-based: alpha(t) and
// beta(t) accept t in [1, T]; alpha_bar(t) accepts t in [0, T] with
// alpha_bar(0) = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // length T
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product of alpha

    double beta_at(int t) const;
    double alpha_at(int t) const;
    double alpha_bar_at(int t) const;
    // Variance of q(z_{t-1} | z_t, z_0).
    double posterior_variance(int t) const;
};

// Linear-in-beta schedule. Rejects T < 1 and beta outside [0, 1).
NoiseSchedule build_schedule(int T, double beta_min, double beta_max);

// Closed-form forward marginal z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise.
Tensor forward_marginal(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& schedule);

// eps_hat = eps_uncond + s (eps_cond - eps_uncond). The s = 0 and s = 1
// endpoints return the corresponding input unchanged.
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s);

// One ancestral step: sample from the eps-parameterized posterior with fixed
// variance. No noise is injected at t = 1.
Tensor reverse_step(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule,
                    RandomStream& rng);

// Denoiser interface the sampler drives.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor& z_t, int t, const ConditioningBundle& cond) = 0;
};

// eps-prediction MSE at one (z0, t, noise) triple. Condition dropout is the
// caller's job; the bundle arrives final.
Tensor training_loss(NoisePredictor& model, const Tensor& z0, const ConditioningBundle& cond, int t,
                     const Tensor& noise, const NoiseSchedule& schedule);

// Full guided ancestral chain from z_T ~ N(0, I). Calls the model twice per
// step (conditioned and null-conditioned) and combines with cfg_combine.
// Deterministic given the rng seed.
Tensor sample_loop(NoisePredictor& model, const ConditioningBundle& cond, const NoiseSchedule& schedule,
                   double guidance_scale, RandomStream& rng, const Shape& latent_shape);

}  // namespace soundit
