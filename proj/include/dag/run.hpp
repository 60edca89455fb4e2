#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "dag/guidance.hpp"
#include "dag/metrics.hpp"
#include "dag/train.hpp"

namespace dag {

// everything the sampling pipeline needs in one place
struct SamplerSetup {
    UNet* denoiser = nullptr;
    DepthHeads* heads = nullptr;       // optional: depth outputs + guidance
    UNet* prior = nullptr;             // optional: depth prior guidance
    const DiffusionSchedule* sched = nullptr;
    const DiffusionSchedule* prior_sched = nullptr;
    GuidanceConfig guidance;
    bool use_ddpm = false;
    int steps = 25;
    float eta = 0.0f;
    int image_size = 32;
};

struct SampleRun {
    Tensor samples;        // [N,1,H,W] in image units (x+1)/2, unclipped
    Tensor sample_depths;  // [N,1,H,W] strong-branch prediction at t=0; defined when heads given
    std::vector<double> l_dc;  // per-sample final losses; empty without heads
    std::vector<double> l_dp;

    double mean_l_dc() const {
        double a = 0;
        for (double v : l_dc) a += v;
        return l_dc.empty() ? 0.0 : a / l_dc.size();
    }
    double mean_l_dp() const {
        double a = 0;
        for (double v : l_dp) a += v;
        return l_dp.empty() ? 0.0 : a / l_dp.size();
    }

    std::vector<Tensor> depth_list() const {
        std::vector<Tensor> out;
        for (int64_t i = 0; i < sample_depths.dim(0); ++i)
            out.push_back(Dataset::slice_sample(sample_depths, i));
        return out;
    }
};

// Final-sample losses, evaluated at t=0 with a per-sample (tau, eta) draw so
// guided and unguided runs with matched seeds are paired.
inline std::pair<double, double> final_losses(const SamplerSetup& s, const Tensor& x0_model,
                                              Tensor* strong_out, uint64_t eval_key,
                                              uint64_t eval_salt) {
    FeatureBundle fb;
    s.denoiser->forward(x0_model, {0}, &fb);
    int64_t H = x0_model.dim(2), W = x0_model.dim(3);
    Tensor ds = s.heads->strong.predict(aggregate_features(fb, s.heads->taps_strong, H, W), 0);
    Tensor dw = s.heads->weak.predict(aggregate_features(fb, s.heads->taps_weak, H, W), 0);
    if (strong_out) *strong_out = ds;
    double ldc = dcg_loss(ds, dw, s.guidance.dcg_metric).item();
    double ldp = 0.0;
    if (s.prior) {
        Rng er = Rng(eval_salt).substream(eval_key);
        int tau = static_cast<int>(er.uniform_int(s.guidance.tau_max));
        Tensor eta = Tensor::randn({1, 1, s.guidance.prior_resolution, s.guidance.prior_resolution}, er);
        auto prior_fwd = [&](const Tensor& z, int t) { return s.prior->forward(z, {t}); };
        ldp = dpg_loss_at(ds, prior_fwd, *s.prior_sched, tau, eta, s.guidance.prior_resolution).item();
    }
    return {ldc, ldp};
}

// n trajectories with per-index substreams; guided when the setup carries
// nonzero scales. Trajectories are independent and merged in index order.
inline SampleRun run_sampling(const SamplerSetup& s, int n, uint64_t seed) {
    DAG_CHECK(n >= 1, config, "run_sampling: n must be >= 1");
    DAG_CHECK(s.denoiser != nullptr && s.sched != nullptr, config, "run_sampling: missing denoiser");
    bool guided = s.guidance.w_dc > 0.0f || s.guidance.w_dp > 0.0f;
    if (guided) DAG_CHECK(s.heads != nullptr, config, "guided sampling requires depth heads");
    if (s.guidance.w_dp > 0.0f)
        DAG_CHECK(s.prior != nullptr && s.prior_sched != nullptr, config,
                  "depth prior guidance requires a prior checkpoint");
    s.denoiser->params.set_requires_grad(false);
    if (s.heads) s.heads->params.set_requires_grad(false);
    if (s.prior) s.prior->params.set_requires_grad(false);

    int64_t H = s.image_size, W = s.image_size;
    SampleRun out;
    out.samples = Tensor::zeros({n, 1, H, W});
    if (s.heads) {
        out.sample_depths = Tensor::zeros({n, 1, H, W});
        out.l_dc.assign(n, 0.0);
        out.l_dp.assign(n, 0.0);
    }
    Rng traj_root(seed);
    Rng hook_root(seed ^ 0xdab5c0deull);

    parallel_for(n, [&](int64_t i) {
        Rng rng = traj_root.substream(static_cast<uint64_t>(i));
        Rng hook_rng = hook_root.substream(static_cast<uint64_t>(i));
        GuidanceHook hook = nullptr;
        if (guided)
            hook = dag_hook(*s.denoiser, *s.heads, s.prior, s.prior_sched, s.guidance, &hook_rng);
        UNetDenoiser model(*s.denoiser);
        Tensor x = s.use_ddpm ? ddpm_sample(model, *s.sched, {1, 1, H, W}, hook, rng)
                              : ddim_sample(model, *s.sched, {1, 1, H, W}, s.steps, s.eta, hook, rng);
        Tensor img = from_model_domain(x);
        std::copy(img.data(), img.data() + img.numel(), out.samples.mutable_data() + i * H * W);
        if (s.heads) {
            Tensor ds;
            auto [ldc, ldp] = final_losses(s, x, &ds, static_cast<uint64_t>(i), seed ^ 0xe7a1ull);
            out.l_dc[i] = ldc;
            out.l_dp[i] = ldp;
            std::copy(ds.data(), ds.data() + ds.numel(), out.sample_depths.mutable_data() + i * H * W);
        }
    });
    return out;
}

// reference depth set for dFID: ground-truth depths of dataset samples
inline std::vector<Tensor> reference_depths(const Dataset& data, int64_t max_count = -1) {
    int64_t n = data.size();
    if (max_count > 0 && max_count < n) n = max_count;
    std::vector<Tensor> out;
    for (int64_t i = 0; i < n; ++i) out.push_back(data.depth(i));
    return out;
}

struct SweepRow {
    std::string mode;
    float scale = 0.0f;
    int prior_resolution = 0;
    double dfid_value = 0.0;
    double mean_l_dc = 0.0;
    double mean_l_dp = 0.0;
};

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                            const std::string& cfg_hash) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write " + path);
    f << "# config-hash: " << cfg_hash << "\n";
    f << "mode,scale,prior_resolution,dfid,mean_l_dc,mean_l_dp\n";
    char buf[160];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6g,%d,%.8g,%.8g,%.8g\n", r.mode.c_str(), r.scale,
                      r.prior_resolution, r.dfid_value, r.mean_l_dc, r.mean_l_dp);
        f << buf;
    }
}

// dFID + mean final losses per guidance scale, one mode at a time; matched
// seeds across scales so the zero row reproduces the unguided baseline
inline std::vector<SweepRow> scale_sweep(SamplerSetup setup, const std::string& mode,
                                         const std::vector<float>& scales, int n, uint64_t seed,
                                         const std::vector<Tensor>& ref_depths) {
    DAG_CHECK(mode == "dcg" || mode == "dpg" || mode == "dag", config,
              "sweep mode must be dcg, dpg or dag");
    std::vector<SweepRow> rows;
    for (float w : scales) {
        setup.guidance.w_dc = mode == "dpg" ? 0.0f : w;
        setup.guidance.w_dp = mode == "dcg" ? 0.0f : w;
        SampleRun run = run_sampling(setup, n, seed);
        SweepRow r;
        r.mode = mode;
        r.scale = w;
        r.prior_resolution = setup.guidance.prior_resolution;
        r.dfid_value = dfid(run.depth_list(), ref_depths);
        r.mean_l_dc = run.mean_l_dc();
        r.mean_l_dp = run.mean_l_dp();
        rows.push_back(r);
    }
    return rows;
}

}  // namespace dag
