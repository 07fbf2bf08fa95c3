// Copyright (c) 2026 the soundit authors
// SPDX-License-Identifier: Apache-2.0

#include "soundit/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace soundit {

namespace {

void check_step(int t, int T, const char* where) {
    if (t < 1 || t > T) {
        throw std::out_of_range(std::string(where) + ": t = " + std::to_string(t) + " outside [1, " +
                                std::to_string(T) + "]");
    }
}

}  // namespace

double NoiseSchedule::beta_at(int t) const {
    check_step(t, T, "beta_at");
    return beta[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(int t) const {
    check_step(t, T, "alpha_at");
    return alpha[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == 0) return 1.0;
    check_step(t, T, "alpha_bar_at");
    return alpha_bar[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::posterior_variance(int t) const {
    check_step(t, T, "posterior_variance");
    const double denom = 1.0 - alpha_bar_at(t);
    if (denom == 0.0) return 0.0;  // noiseless schedule
    return (1.0 - alpha_bar_at(t - 1)) / denom * beta_at(t);
}

NoiseSchedule build_schedule(int T, double beta_min, double beta_max) {
    if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
    if (!(beta_min >= 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw std::invalid_argument("build_schedule: need 0 <= beta_min <= beta_max < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        s.beta[static_cast<size_t>(t)] = beta_min + (beta_max - beta_min) * frac;
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        prod *= s.alpha[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

Tensor forward_marginal(const Tensor& z0, int t, const Tensor& noise, const NoiseSchedule& schedule) {
    check_step(t, schedule.T, "forward_marginal");
    if (z0.shape() != noise.shape()) {
        throw std::invalid_argument("forward_marginal: noise shape " + shape_str(noise.shape()) +
                                    " != latent shape " + shape_str(z0.shape()));
    }
    const double abar = schedule.alpha_bar_at(t);
    return z0 * std::sqrt(abar) + noise * std::sqrt(1.0 - abar);
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s) {
    if (eps_uncond.shape() != eps_cond.shape()) {
        throw std::invalid_argument("cfg_combine: shape mismatch " + shape_str(eps_uncond.shape()) + " vs " +
                                    shape_str(eps_cond.shape()));
    }
    if (!std::isfinite(s)) throw std::invalid_argument("cfg_combine: non-finite scale");
    if (s == 0.0) return eps_uncond;
    if (s == 1.0) return eps_cond;
    return eps_uncond + (eps_cond - eps_uncond) * s;
}

Tensor reverse_step(const Tensor& z_t, int t, const Tensor& eps_hat, const NoiseSchedule& schedule,
                    RandomStream& rng) {
    check_step(t, schedule.T, "reverse_step");
    if (z_t.shape() != eps_hat.shape()) {
        throw std::invalid_argument("reverse_step: eps shape " + shape_str(eps_hat.shape()) +
                                    " != latent shape " + shape_str(z_t.shape()));
    }
    if (!eps_hat.all_finite()) throw std::runtime_error("reverse_step: non-finite noise prediction");

    const double alpha = schedule.alpha_at(t);
    const double abar = schedule.alpha_bar_at(t);
    // mu = (z_t - (1 - alpha) / sqrt(1 - abar) * eps) / sqrt(alpha); the
    // coefficient is 0/0 on a noiseless schedule, where the mean is just z_t.
    const double eps_coef = (1.0 - alpha) == 0.0 ? 0.0 : (1.0 - alpha) / std::sqrt(1.0 - abar);
    Tensor mean = (z_t - eps_hat * eps_coef) * (1.0 / std::sqrt(alpha));
    if (t == 1) return mean;

    const double sigma = std::sqrt(schedule.posterior_variance(t));
    if (sigma == 0.0) return mean;
    Tensor xi = Tensor::randn(z_t.shape(), rng);
    return mean + xi * sigma;
}

Tensor training_loss(NoisePredictor& model, const Tensor& z0, const ConditioningBundle& cond, int t,
                     const Tensor& noise, const NoiseSchedule& schedule) {
    Tensor z_t = forward_marginal(z0, t, noise, schedule);
    Tensor pred = model.predict(z_t, t, cond);
    return mse_loss(pred, noise);
}

Tensor sample_loop(NoisePredictor& model, const ConditioningBundle& cond, const NoiseSchedule& schedule,
                   double guidance_scale, RandomStream& rng, const Shape& latent_shape) {
    NoGradGuard no_grad;
    const ConditioningBundle null_cond = cond.as_null();
    Tensor z = Tensor::randn(latent_shape, rng);
    for (int t = schedule.T; t >= 1; --t) {
        Tensor eps_cond = model.predict(z, t, cond);
        Tensor eps_uncond = model.predict(z, t, null_cond);
        Tensor eps_hat = cfg_combine(eps_uncond, eps_cond, guidance_scale);
        z = reverse_step(z, t, eps_hat, schedule, rng);
    }
    return z;
}

}  // namespace soundit
