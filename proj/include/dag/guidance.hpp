#pragma once

#include <cmath>
#include <string>

#include "dag/depth.hpp"
#include "dag/sampler.hpp"
#include "dag/unet.hpp"

namespace dag {

enum class DcgMetric { l1, squared_l2 };

inline DcgMetric dcg_metric_from_string(const std::string& s) {
    if (s == "l1") return DcgMetric::l1;
    if (s == "l2") return DcgMetric::squared_l2;
    fail(ErrorKind::config, "dcg metric must be l1 or l2, got " + s);
}

struct GuidanceConfig {
    float w_dc = 40.0f;
    float w_dp = 40.0f;
    int tau_max = 25;            // prior noising timesteps drawn uniformly from [0, tau_max)
    int prior_resolution = 32;   // depth maps are resized to this before the prior
    DcgMetric dcg_metric = DcgMetric::l1;
};

// depth consistency: distance(stopgrad(strong), weak); gradient flows only
// through the weak branch
inline Tensor dcg_loss(const Tensor& strong_depth, const Tensor& weak_depth, DcgMetric metric) {
    DAG_CHECK(strong_depth.shape() == weak_depth.shape(), contract, "dcg_loss: shape mismatch");
    Tensor pseudo_label = detach(strong_depth);
    return metric == DcgMetric::l1 ? l1_loss(weak_depth, pseudo_label) : mse_loss(weak_depth, pseudo_label);
}

// depth maps live in (0,10]; the prior diffuses them in a [-1,1] domain
inline Tensor depth_to_prior_domain(const Tensor& d) {
    return add_scalar(scale(d, 2.0f / kMaxDepth), -1.0f);
}

// depth prior score at a fixed (tau, eta): noise the strong prediction on the
// prior schedule and measure the prior's noise-prediction error. Gradient
// flows through the depth input (no stop-gradient on the strong branch here).
// PriorFwd: (const Tensor& x, int t) -> Tensor eps prediction.
template <class PriorFwd>
inline Tensor dpg_loss_at(const Tensor& strong_depth, PriorFwd&& prior,
                          const DiffusionSchedule& prior_sched, int tau, const Tensor& eta,
                          int prior_resolution) {
    DAG_CHECK(strong_depth.ndim() == 4 && strong_depth.dim(1) == 1, contract,
              "dpg_loss expects [1,1,H,W] depth");
    Tensor d = strong_depth;
    if (d.dim(2) != prior_resolution || d.dim(3) != prior_resolution)
        d = upsample(d, UpsampleMode::bilinear, prior_resolution, prior_resolution);
    DAG_CHECK(eta.shape() == d.shape(), contract, "dpg_loss: eta shape mismatch");
    Tensor z = depth_to_prior_domain(d);
    Tensor d_tau = q_sample(prior_sched, z, tau, eta);
    Tensor eps_pred = prior(d_tau, tau);
    return mse_loss(eps_pred, eta);
}

// draws tau ~ U[0, tau_max) and eta ~ N(0, I); one fresh draw per invocation
template <class PriorFwd>
inline Tensor dpg_loss(const Tensor& strong_depth, PriorFwd&& prior,
                       const DiffusionSchedule& prior_sched, const GuidanceConfig& cfg, Rng& rng) {
    DAG_CHECK(cfg.tau_max >= 1 && cfg.tau_max <= prior_sched.T, config,
              "dpg_loss: tau_max must lie in [1, prior T]");
    int tau = static_cast<int>(rng.uniform_int(cfg.tau_max));
    Tensor eta = Tensor::randn({1, 1, cfg.prior_resolution, cfg.prior_resolution}, rng);
    return dpg_loss_at(strong_depth, prior, prior_sched, tau, eta, cfg.prior_resolution);
}

// The depth-aware guidance hook. Given (x_t, t) it re-runs the denoiser with
// gradients enabled, predicts both depth branches from the tapped features,
// forms L = w_dp * L_dp + w_dc * L_dc and returns -grad_x L, which the
// samplers add to the reverse mean. Networks must be frozen by the caller;
// only x_t receives gradient. `rng` supplies the per-step (tau, eta) draws.
inline GuidanceHook dag_hook(const UNet& denoiser, const DepthHeads& heads, const UNet* prior,
                             const DiffusionSchedule* prior_sched, const GuidanceConfig& cfg,
                             Rng* rng) {
    DAG_CHECK(cfg.w_dc >= 0.0f && cfg.w_dp >= 0.0f, config, "guidance scales must be >= 0");
    if (cfg.w_dp > 0.0f)
        DAG_CHECK(prior != nullptr && prior_sched != nullptr, config,
                  "depth prior guidance requires a prior network");

    return [&denoiser, &heads, prior, prior_sched, cfg, rng](const Tensor& x_t, int t) -> Tensor {
        if (cfg.w_dc == 0.0f && cfg.w_dp == 0.0f) return Tensor::zeros(x_t.shape());

        Tape tape;
        Tensor x = detach(x_t);
        x.set_requires_grad(true);
        {
            TapeScope scope(tape);
            FeatureBundle fb;
            denoiser.forward(x, {t}, &fb);
            int64_t H = x.dim(2), W = x.dim(3);
            Tensor strong_feat = aggregate_features(fb, heads.taps_strong, H, W);
            Tensor d_strong = heads.strong.predict(strong_feat, t);

            Tensor loss;
            if (cfg.w_dc > 0.0f) {
                Tensor weak_feat = aggregate_features(fb, heads.taps_weak, H, W);
                Tensor d_weak = heads.weak.predict(weak_feat, t);
                loss = scale(dcg_loss(d_strong, d_weak, cfg.dcg_metric), cfg.w_dc);
            }
            if (cfg.w_dp > 0.0f) {
                auto prior_fwd = [prior](const Tensor& z, int tau) { return prior->forward(z, {tau}); };
                Tensor dp = scale(dpg_loss(d_strong, prior_fwd, *prior_sched, cfg, *rng), cfg.w_dp);
                loss = loss.defined() ? add(loss, dp) : dp;
            }
            tape.backward(loss);
        }
        DAG_CHECK(x.has_grad(), contract, "guidance hook: loss is not connected to x_t");
        Tensor g = Tensor::zeros(x.shape());
        const std::vector<float>& gx = x.grad();
        float* pg = g.mutable_data();
        for (int64_t i = 0; i < g.numel(); ++i) {
            DAG_CHECK(std::isfinite(gx[i]), numeric,
                      "guidance hook: non-finite gradient at t=" + std::to_string(t));
            pg[i] = -gx[i];
        }
        return g;
    };
}

}  // namespace dag
