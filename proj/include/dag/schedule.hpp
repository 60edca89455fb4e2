#pragma once

#include <cmath>
#include <vector>

#include "dag/ops.hpp"
#include "dag/tensor.hpp"

namespace dag {

// beta/alpha/alpha_bar tables and the derived sampling coefficients for T
// steps. Tables are built in double and stored as f32.
struct DiffusionSchedule {
    int T = 0;
    std::vector<float> beta;
    std::vector<float> alpha;
    std::vector<float> alpha_bar;
    std::vector<float> posterior_var;  // beta_t * (1 - abar_{t-1}) / (1 - abar_t); 0 at t=0

    float sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[t]); }
    float sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0f - alpha_bar[t]); }
};

inline DiffusionSchedule linear_schedule(int T, float beta_start = 1e-4f, float beta_end = 0.02f) {
    DAG_CHECK(T >= 2, config, "linear_schedule: T must be >= 2");
    DAG_CHECK(beta_start > 0.0f && beta_start <= beta_end && beta_end < 1.0f, config,
              "linear_schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.posterior_var.resize(T);
    double abar = 1.0;
    double prev_abar = 1.0;
    for (int t = 0; t < T; ++t) {
        double b = static_cast<double>(beta_start) +
                   (static_cast<double>(beta_end) - beta_start) * t / (T - 1);
        prev_abar = abar;
        abar *= 1.0 - b;
        s.beta[t] = static_cast<float>(b);
        s.alpha[t] = static_cast<float>(1.0 - b);
        s.alpha_bar[t] = static_cast<float>(abar);
        s.posterior_var[t] = t == 0 ? 0.0f : static_cast<float>(b * (1.0 - prev_abar) / (1.0 - abar));
    }
    return s;
}

// closed-form forward process: sqrt(abar_t) x0 + sqrt(1-abar_t) eps
inline Tensor q_sample(const DiffusionSchedule& s, const Tensor& x0, int t, const Tensor& eps) {
    DAG_CHECK(t >= 0 && t < s.T, config, "q_sample: t out of range");
    DAG_CHECK(x0.shape() == eps.shape(), contract, "q_sample: eps shape mismatch");
    return add(scale(x0, s.sqrt_alpha_bar(t)), scale(eps, s.sqrt_one_minus_alpha_bar(t)));
}

}  // namespace dag
