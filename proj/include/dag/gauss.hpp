#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dag/parallel.hpp"
#include "dag/sampler.hpp"

namespace dag {

// Closed-form diffusion on an isotropic Gaussian data distribution. The
// analytic noise predictor below is the exact minimizer of the simplified
// objective for x0 ~ N(mu, sigma2 I), so samplers run against it can be
// checked against known terminal moments.
struct GaussianWorld {
    int dim = 1;
    std::vector<float> mu;
    float sigma2 = 1.0f;
};

inline Tensor optimal_eps(const GaussianWorld& w, const DiffusionSchedule& s, const Tensor& x_t, int t) {
    DAG_CHECK(x_t.numel() == w.dim, contract, "optimal_eps: dim mismatch");
    float abar = s.alpha_bar[t];
    float sab = std::sqrt(abar);
    float somab = std::sqrt(1.0f - abar);
    float denom = abar * w.sigma2 + (1.0f - abar);
    Tensor e = Tensor::zeros(x_t.shape());
    const float* px = x_t.data();
    float* pe = e.mutable_data();
    for (int i = 0; i < w.dim; ++i) pe[i] = somab * (px[i] - sab * w.mu[i]) / denom;
    return e;
}

struct GaussOracleModel : DenoiseModel {
    GaussianWorld world;
    DiffusionSchedule schedule;
    GaussOracleModel(GaussianWorld w, DiffusionSchedule s) : world(std::move(w)), schedule(std::move(s)) {}
    Tensor eps(const Tensor& x_t, int t) override { return optimal_eps(world, schedule, x_t, t); }
};

struct MomentReport {
    std::vector<double> mean;
    std::vector<double> var;  // unbiased
    int n = 0;

    std::string text(const GaussianWorld& w) const {
        std::string out;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "n=%d trajectories, dim=%d\n", n, static_cast<int>(mean.size()));
        out += buf;
        for (size_t i = 0; i < mean.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "  coord %zu: mean %.5f (target %.5f)  var %.5f (target %.5f)\n",
                          i, mean[i], static_cast<double>(w.mu[i]), var[i], static_cast<double>(w.sigma2));
            out += buf;
        }
        return out;
    }
};

enum class SamplerKind { ddpm, ddim };

// Runs n trajectories of the chosen sampler with the analytic predictor and
// reports empirical per-coordinate moments. Trajectories use per-index RNG
// substreams and are merged in index order, so the result is independent of
// the worker count.
inline MomentReport oracle_sampling_test(const GaussianWorld& w, const DiffusionSchedule& s,
                                         SamplerKind kind, int n, const Rng& root,
                                         int ddim_steps = 25, float ddim_eta = 0.0f,
                                         const GuidanceHook& hook = nullptr) {
    GaussOracleModel model(w, s);
    std::vector<float> samples(static_cast<size_t>(n) * w.dim);
    parallel_for(n, [&](int64_t i) {
        Rng rng = root.substream(static_cast<uint64_t>(i));
        Tensor x = kind == SamplerKind::ddpm
                       ? ddpm_sample(model, s, {w.dim}, hook, rng)
                       : ddim_sample(model, s, {w.dim}, ddim_steps, ddim_eta, hook, rng);
        std::copy(x.data(), x.data() + w.dim, samples.begin() + i * w.dim);
    });
    MomentReport r;
    r.n = n;
    r.mean.assign(w.dim, 0.0);
    r.var.assign(w.dim, 0.0);
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < w.dim; ++d) r.mean[d] += samples[static_cast<size_t>(i) * w.dim + d];
    for (int d = 0; d < w.dim; ++d) r.mean[d] /= n;
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < w.dim; ++d) {
            double df = samples[static_cast<size_t>(i) * w.dim + d] - r.mean[d];
            r.var[d] += df * df;
        }
    for (int d = 0; d < w.dim; ++d) r.var[d] /= (n - 1);
    return r;
}

}  // namespace dag
