#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dag/metrics.hpp"
#include "dag/nn.hpp"
#include "dag/scene.hpp"
#include "dag/unet.hpp"

namespace dag {

// One block of the pixel-wise depth MLP: linear -> activation -> norm, with
// the projected time embedding added after every hidden block. Hidden blocks
// use SiLU + batch-statistics normalization (never switched to eval mode);
// the last block is sigmoid with no norm or time path.
struct DepthMlpBlock {
    LinearLayer lin;
    LinearLayer time_proj;
    BatchNorm1dLayer norm;
    bool last = false;

    static DepthMlpBlock make(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                              int time_dim, Rng& rng) {
        DepthMlpBlock b;
        b.last = out == 1;
        b.lin = LinearLayer::make(ps, prefix + ".lin", in, out, rng);
        if (!b.last) {
            b.norm = BatchNorm1dLayer::make(ps, prefix + ".norm", out);
            b.time_proj = LinearLayer::make(ps, prefix + ".time", time_dim, out, rng);
        }
        return b;
    }

    Tensor forward(const Tensor& x, const Tensor& temb_row, const BnStats* fixed = nullptr,
                   BnStats* out_stats = nullptr) const {
        Tensor h = lin(x);
        if (last) return sigmoid(h);
        h = norm(silu(h), fixed, out_stats);
        return add_row(h, time_proj(temb_row));
    }
};

// captured normalization statistics, for probing pixel-wise purity
struct DepthHeadStats {
    BnStats s1, s2;
};

// 3-layer pixel-wise regressor over concatenated tap features, sigmoid * 10
struct DepthHead {
    int in_dim = 0;
    int time_dim = 256;
    float max_depth = kMaxDepth;
    DepthMlpBlock b1, b2, b3;

    static DepthHead make(ParamStore& ps, const std::string& prefix, int in_dim, int time_dim, Rng& rng) {
        DepthHead h;
        h.in_dim = in_dim;
        h.time_dim = time_dim;
        h.b1 = DepthMlpBlock::make(ps, prefix + ".0", in_dim, 256, time_dim, rng);
        h.b2 = DepthMlpBlock::make(ps, prefix + ".1", 256, 128, time_dim, rng);
        h.b3 = DepthMlpBlock::make(ps, prefix + ".2", 128, 1, time_dim, rng);
        return h;
    }

    // features [1,C,H,W] queried pixel-by-pixel -> depth [1,1,H,W] in (0,10)
    Tensor predict(const Tensor& features, int t, const DepthHeadStats* fixed = nullptr,
                   DepthHeadStats* out_stats = nullptr) const {
        DAG_CHECK(features.ndim() == 4 && features.dim(0) == 1, contract,
                  "predict_depth expects [1,C,H,W] features");
        DAG_CHECK(features.dim(1) == in_dim, contract,
                  "predict_depth: feature channels " + std::to_string(features.dim(1)) +
                      " do not match head input dim " + std::to_string(in_dim));
        Tensor temb = timestep_embedding(t, time_dim);
        Tensor px = pixels_from_image(features);
        Tensor h = b1.forward(px, temb, fixed ? &fixed->s1 : nullptr, out_stats ? &out_stats->s1 : nullptr);
        h = b2.forward(h, temb, fixed ? &fixed->s2 : nullptr, out_stats ? &out_stats->s2 : nullptr);
        h = b3.forward(h, temb);
        return scale(image_from_pixels(h, 1, features.dim(2), features.dim(3)), max_depth);
    }
};

// asymmetric strong/weak predictors sharing one parameter store so both train
// under a single optimizer
struct DepthHeads {
    ParamStore params;
    DepthHead strong, weak;
    std::vector<int> taps_strong, taps_weak;

    DepthHeads(const UNetConfig& unet_cfg, std::vector<int> taps_s, std::vector<int> taps_w,
               int time_dim, Rng& rng)
        : taps_strong(std::move(taps_s)), taps_weak(std::move(taps_w)) {
        auto dim_of = [&](const std::vector<int>& taps) {
            int d = 0;
            for (int k : taps) d += unet_cfg.tap_channels(k);
            return d;
        };
        strong = DepthHead::make(params, "depth.strong", dim_of(taps_strong), time_dim, rng);
        weak = DepthHead::make(params, "depth.weak", dim_of(taps_weak), time_dim, rng);
    }
};

// default tap split: strong aggregates every decoder block, weak reads the
// single middle one (upper middle for even counts: the weak block sits in the
// shallow half, which keeps the branches genuinely asymmetric)
inline std::vector<int> default_strong_taps(const UNetConfig& c) { return c.effective_taps(); }
inline std::vector<int> default_weak_taps(const UNetConfig& c) {
    std::vector<int> all = c.effective_taps();
    return {all[all.size() / 2]};
}

struct DepthTrainConfig {
    int labeled_count = 100;
    float lr = 1e-5f;
    int steps = 20000;
    int batch = 8;
    int t_max_train = 800;
    int log_every = 50;
};

struct TrainCurve {
    std::vector<std::pair<int64_t, float>> points;
};

// images are stored in [0,1]; the denoiser operates on [-1,1]
inline Tensor to_model_domain(const Tensor& img01) { return add_scalar(scale(img01, 2.0f), -1.0f); }
inline Tensor from_model_domain(const Tensor& x) { return scale(add_scalar(x, 1.0f), 0.5f); }

// Joint strong+weak training on frozen denoiser features: per step, each
// batch image gets its own (t, eps); features come from a gradient-free
// denoiser pass and only the heads learn, minimizing the summed per-pixel L1
// of both branches.
inline TrainCurve train_depth_heads(UNet& denoiser, const Dataset& data,
                                    const std::vector<int64_t>& labeled, DepthHeads& heads,
                                    const DiffusionSchedule& sched, const DepthTrainConfig& cfg,
                                    const Rng& root) {
    DAG_CHECK(!labeled.empty(), config, "train_depth_heads: empty labeled set");
    DAG_CHECK(cfg.t_max_train <= sched.T, config, "train_depth_heads: t_max_train exceeds T");
    denoiser.params.set_requires_grad(false);
    heads.params.set_requires_grad(true);
    Adam opt(heads.params, cfg.lr);
    TrainCurve curve;
    int64_t H = data.images.dim(2), W = data.images.dim(3);

    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = root.substream(static_cast<uint64_t>(step));
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            for (int b = 0; b < cfg.batch; ++b) {
                int64_t idx = labeled[rng.uniform_int(static_cast<int64_t>(labeled.size()))];
                int t = static_cast<int>(rng.uniform_int(cfg.t_max_train));
                Tensor x0 = to_model_domain(data.image(idx));
                Tensor eps = Tensor::randn(x0.shape(), rng);
                Tensor y = data.depth(idx);

                // feature extraction stays off the training tape: the
                // denoiser is frozen and its inputs carry no grad, so nothing
                // records; the inner scope just keeps that invariant explicit
                FeatureBundle fb;
                {
                    Tape off;
                    TapeScope inner(off);
                    Tensor x_t = q_sample(sched, x0, t, eps);
                    denoiser.forward(x_t, {t}, &fb);
                }
                Tensor fs = aggregate_features(fb, heads.taps_strong, H, W);
                Tensor fw = aggregate_features(fb, heads.taps_weak, H, W);
                Tensor ds = heads.strong.predict(fs, t);
                Tensor dw = heads.weak.predict(fw, t);
                Tensor li = add(l1_loss(ds, y), l1_loss(dw, y));
                loss = loss.defined() ? add(loss, li) : li;
            }
            loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));
            DAG_CHECK(all_finite(loss), numeric,
                      "train_depth_heads: NaN loss at step " + std::to_string(step));
            tape.backward(loss);
        }
        opt.step();
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
            curve.points.emplace_back(step, loss.item());
    }
    return curve;
}

// depth prediction for one dataset image at timestep t; the noising eps is a
// fixed function of (eval_seed, image index, t)
inline Tensor probe_depth(const UNet& denoiser, const DepthHeads& heads, bool strong_branch,
                          const Dataset& data, int64_t idx, int t, const DiffusionSchedule& sched,
                          const Rng& eval_root) {
    Rng rng = eval_root.substream(static_cast<uint64_t>(idx) * 4096 + static_cast<uint64_t>(t));
    Tensor x0 = to_model_domain(data.image(idx));
    Tensor eps = Tensor::randn(x0.shape(), rng);
    Tensor x_t = q_sample(sched, x0, t, eps);
    FeatureBundle fb;
    denoiser.forward(x_t, {t}, &fb);
    const std::vector<int>& taps = strong_branch ? heads.taps_strong : heads.taps_weak;
    Tensor f = aggregate_features(fb, taps, data.images.dim(2), data.images.dim(3));
    return (strong_branch ? heads.strong : heads.weak).predict(f, t);
}

// mean delta<1.25 accuracy of one branch over an eval set at timestep t
inline double eval_branch_accuracy(const UNet& denoiser, const DepthHeads& heads, bool strong_branch,
                                   const Dataset& data, const std::vector<int64_t>& eval_idx, int t,
                                   const DiffusionSchedule& sched, const Rng& eval_root) {
    std::vector<double> accs(eval_idx.size());
    parallel_for(static_cast<int64_t>(eval_idx.size()), [&](int64_t i) {
        Tensor pred = probe_depth(denoiser, heads, strong_branch, data, eval_idx[i], t, sched, eval_root);
        accs[i] = depth_accuracy(pred, data.depth(eval_idx[i]));
    });
    double acc = 0.0;
    for (double a : accs) acc += a;
    return acc / static_cast<double>(accs.size());
}

struct AccuracyRow {
    int t = 0;
    double strong = 0.0;
    double weak = 0.0;
};

// delta<1.25 of both branches per timestep, averaged over the eval set
inline std::vector<AccuracyRow> accuracy_sweep(const UNet& denoiser, const DepthHeads& heads,
                                               const Dataset& data, const std::vector<int64_t>& eval_idx,
                                               const std::vector<int>& timesteps,
                                               const DiffusionSchedule& sched, const Rng& eval_root) {
    std::vector<AccuracyRow> rows;
    for (int t : timesteps) {
        DAG_CHECK(t < sched.T, config, "accuracy_sweep: timestep out of range");
        AccuracyRow r;
        r.t = t;
        r.strong = eval_branch_accuracy(denoiser, heads, true, data, eval_idx, t, sched, eval_root);
        r.weak = eval_branch_accuracy(denoiser, heads, false, data, eval_idx, t, sched, eval_root);
        rows.push_back(r);
    }
    return rows;
}

// median of all ground-truth depth pixels over the given images
inline double median_depth(const Dataset& data, const std::vector<int64_t>& idx) {
    std::vector<float> all;
    int64_t hw = data.images.dim(2) * data.images.dim(3);
    for (int64_t i : idx) {
        const float* p = data.depths.data() + i * hw;
        all.insert(all.end(), p, p + hw);
    }
    std::sort(all.begin(), all.end());
    size_t n = all.size();
    return n % 2 ? all[n / 2] : 0.5 * (double(all[n / 2 - 1]) + all[n / 2]);
}

// accuracy of the constant-c predictor over an eval set
inline double constant_baseline_accuracy(const Dataset& data, const std::vector<int64_t>& eval_idx,
                                         double c, double threshold = 1.25) {
    double acc = 0.0;
    for (int64_t i : eval_idx) {
        Tensor pred = Tensor::full({1, 1, data.images.dim(2), data.images.dim(3)}, static_cast<float>(c));
        acc += depth_accuracy(pred, data.depth(i), threshold);
    }
    return acc / static_cast<double>(eval_idx.size());
}

}  // namespace dag
