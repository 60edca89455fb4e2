#pragma once

#include <functional>
#include <vector>

#include "dag/rng.hpp"
#include "dag/schedule.hpp"

namespace dag {

// Anything that predicts the noise component of x_t. Implementations must not
// record onto the caller's tape (the samplers run gradient-free).
struct DenoiseModel {
    virtual ~DenoiseModel() = default;
    virtual Tensor eps(const Tensor& x_t, int t) = 0;
};

// Returns a tensor shaped like x_t carrying -grad_{x_t}(sum_i w_i L_i); the
// samplers add it to the reverse mean (DDPM) or fold it into the predicted
// noise as a score shift (DDIM). An empty function means unguided.
using GuidanceHook = std::function<Tensor(const Tensor& x_t, int t)>;

// RNG draw order per trajectory: init noise first, then one draw per step
// that adds noise (t > 0 for DDPM; eta > 0 and i > 0 for DDIM). Guidance-hook
// internal draws come from the hook's own stream.

// one ancestral step: sample from N(mu_theta + hook, posterior_var[t]); no
// noise at t=0
inline Tensor ddpm_step(DenoiseModel& model, const DiffusionSchedule& s, const Tensor& x_t, int t,
                        const GuidanceHook& hook, Rng& rng) {
    DAG_CHECK(t >= 0 && t < s.T, config, "ddpm_step: t out of range");
    Tensor eps_hat = model.eps(x_t, t);
    DAG_CHECK(all_finite(eps_hat), numeric, "ddpm_step: non-finite model output at t=" + std::to_string(t));
    float inv_sqrt_alpha = 1.0f / std::sqrt(s.alpha[t]);
    float eps_coef = s.beta[t] / s.sqrt_one_minus_alpha_bar(t);
    Tensor mean = scale(sub(x_t, scale(eps_hat, eps_coef)), inv_sqrt_alpha);
    if (hook) mean = add(mean, hook(x_t, t));
    if (t == 0) return mean;
    Tensor z = Tensor::randn(mean.shape(), rng);
    return add(mean, scale(z, std::sqrt(s.posterior_var[t])));
}

inline Tensor ddpm_sample(DenoiseModel& model, const DiffusionSchedule& s, const Shape& shape,
                          const GuidanceHook& hook, Rng& rng) {
    Tensor x = Tensor::randn(shape, rng);
    for (int t = s.T - 1; t >= 0; --t) x = ddpm_step(model, s, x, t, hook, rng);
    return x;
}

// evenly spaced timestep sub-sequence including t=0, ascending
inline std::vector<int> ddim_timesteps(int T, int steps) {
    DAG_CHECK(steps >= 1, config, "ddim: steps must be >= 1");
    DAG_CHECK(steps <= T, config, "ddim: steps must be <= T");
    std::vector<int> ts(steps);
    for (int i = 0; i < steps; ++i) ts[i] = static_cast<int>(static_cast<int64_t>(i) * T / steps);
    return ts;
}

// DDIM update over the sub-sequence; eta=0 deterministic. Guidance enters as
// a score shift on the predicted noise: eps' = eps - sqrt(1-abar_t) * hook.
inline Tensor ddim_sample(DenoiseModel& model, const DiffusionSchedule& s, const Shape& shape,
                          int steps, float eta, const GuidanceHook& hook, Rng& rng) {
    DAG_CHECK(eta >= 0.0f, config, "ddim: eta must be >= 0");
    std::vector<int> ts = ddim_timesteps(s.T, steps);
    Tensor x = Tensor::randn(shape, rng);
    for (int i = steps - 1; i >= 0; --i) {
        int t = ts[i];
        Tensor eps_hat = model.eps(x, t);
        DAG_CHECK(all_finite(eps_hat), numeric,
                  "ddim_sample: non-finite model output at t=" + std::to_string(t));
        if (hook) eps_hat = sub(eps_hat, scale(hook(x, t), s.sqrt_one_minus_alpha_bar(t)));
        float abar = s.alpha_bar[t];
        float abar_prev = i > 0 ? s.alpha_bar[ts[i - 1]] : 1.0f;
        Tensor x0_hat = scale(sub(x, scale(eps_hat, std::sqrt(1.0f - abar))), 1.0f / std::sqrt(abar));
        float sigma = eta * std::sqrt((1.0f - abar_prev) / (1.0f - abar)) *
                      std::sqrt(1.0f - abar / abar_prev);
        float dir_coef = 1.0f - abar_prev - sigma * sigma;
        if (dir_coef < 0.0f) dir_coef = 0.0f;
        x = add(scale(x0_hat, std::sqrt(abar_prev)), scale(eps_hat, std::sqrt(dir_coef)));
        if (i > 0 && sigma > 0.0f) {
            Tensor z = Tensor::randn(x.shape(), rng);
            x = add(x, scale(z, sigma));
        }
    }
    return x;
}

// simplified objective at a given (t, eps): ||eps - model(q_sample(x0,t,eps), t)||^2 (mean).
// The model forward runs under whatever tape is active, so this is usable for
// training directly.
template <class ModelFwd>
inline Tensor denoising_loss_at(ModelFwd&& model_fwd, const DiffusionSchedule& s, const Tensor& x0,
                                int t, const Tensor& eps) {
    Tensor x_t = q_sample(s, x0, t, eps);
    Tensor eps_hat = model_fwd(x_t, t);
    return mse_loss(eps_hat, eps);
}

// draws t ~ U[0,T) and eps ~ N(0,I)
template <class ModelFwd>
inline Tensor training_loss(ModelFwd&& model_fwd, const DiffusionSchedule& s, const Tensor& x0,
                            Rng& rng) {
    int t = static_cast<int>(rng.uniform_int(s.T));
    Tensor eps = Tensor::randn(x0.shape(), rng);
    return denoising_loss_at(model_fwd, s, x0, t, eps);
}

}  // namespace dag
