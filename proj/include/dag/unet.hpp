#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dag/nn.hpp"
#include "dag/sampler.hpp"

namespace dag {

// sinusoidal embedding: first half sines, second half cosines, geometric
// frequency ladder with max period 10000; emb[0] = sin(t)
inline Tensor timestep_embedding(int t, int dim) {
    DAG_CHECK(dim % 2 == 0, config, "timestep_embedding: dim must be even");
    DAG_CHECK(t >= 0, config, "timestep_embedding: t must be >= 0");
    int half = dim / 2;
    Tensor e = Tensor::zeros({1, dim});
    float* p = e.mutable_data();
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        double arg = static_cast<double>(t) * freq;
        p[i] = static_cast<float>(std::sin(arg));
        p[half + i] = static_cast<float>(std::cos(arg));
    }
    return e;
}

inline Tensor timestep_embedding_batch(const std::vector<int>& ts, int dim) {
    Tensor e = Tensor::zeros({static_cast<int64_t>(ts.size()), dim});
    float* p = e.mutable_data();
    for (size_t n = 0; n < ts.size(); ++n) {
        Tensor row = timestep_embedding(ts[n], dim);
        std::copy(row.data(), row.data() + dim, p + n * dim);
    }
    return e;
}

struct UNetConfig {
    int in_channels = 1;
    int base_channels = 32;
    std::vector<int> channel_mults = {1, 2, 4};
    int blocks_per_level = 2;
    int time_embed_dim = 256;
    int groups = 8;
    // decoder block indices to tap, 1-based, k=1 deepest; empty = all
    std::vector<int> tap_indices;

    int levels() const { return static_cast<int>(channel_mults.size()); }
    int decoder_blocks() const { return levels() * blocks_per_level; }

    std::vector<int> effective_taps() const {
        if (!tap_indices.empty()) return tap_indices;
        std::vector<int> all(decoder_blocks());
        for (int i = 0; i < decoder_blocks(); ++i) all[i] = i + 1;
        return all;
    }

    // channel width of decoder block k (1-based, deepest first)
    int tap_channels(int k) const {
        int level_from_deep = (k - 1) / blocks_per_level;  // 0 = deepest
        int mult = channel_mults[levels() - 1 - level_from_deep];
        return base_channels * mult;
    }
};

// decoder activations captured during one forward pass, at native resolutions
struct FeatureBundle {
    std::vector<int> t_per_sample;
    std::vector<int> tap_indices;  // ascending k
    std::vector<Tensor> taps;      // parallel to tap_indices

    const Tensor& tap(int k) const {
        for (size_t i = 0; i < tap_indices.size(); ++i)
            if (tap_indices[i] == k) return taps[i];
        fail(ErrorKind::contract, "feature bundle has no tap " + std::to_string(k));
    }
};

struct ResBlock {
    GroupNormLayer gn1;
    Conv2dLayer conv1;
    LinearLayer time_proj;
    GroupNormLayer gn2;
    Conv2dLayer conv2;
    Conv2dLayer skip;
    bool has_skip = false;

    static ResBlock make(ParamStore& ps, const std::string& prefix, int64_t cin, int64_t cout,
                         int temb_dim, int groups, Rng& rng) {
        ResBlock b;
        b.gn1 = GroupNormLayer::make(ps, prefix + ".gn1", cin, groups);
        b.conv1 = Conv2dLayer::make(ps, prefix + ".conv1", cin, cout, 3, 1, 1, rng);
        b.time_proj = LinearLayer::make(ps, prefix + ".temb", temb_dim, cout, rng);
        b.gn2 = GroupNormLayer::make(ps, prefix + ".gn2", cout, groups);
        // second conv zero-initialized so the block starts as (skip-projected) identity
        b.conv2 = Conv2dLayer::make(ps, prefix + ".conv2", cout, cout, 3, 1, 1, rng, /*zero=*/true);
        if (cin != cout) {
            b.skip = Conv2dLayer::make(ps, prefix + ".skip", cin, cout, 1, 1, 0, rng);
            b.has_skip = true;
        }
        return b;
    }

    Tensor forward(const Tensor& x, const Tensor& temb) const {
        Tensor h = conv1(silu(gn1(x)));
        h = add_channel(h, time_proj(silu(temb)));
        h = conv2(silu(gn2(h)));
        return add(h, has_skip ? skip(x) : x);
    }
};

// Tiny time-conditioned U-Net noise predictor with decoder feature taps.
// Decoder blocks are numbered k=1 (deepest) through k=levels*blocks_per_level
// (shallowest); taps are pure reads of block outputs.
struct UNet {
    UNetConfig cfg;
    ParamStore params;
    LinearLayer time1, time2;
    Conv2dLayer stem;
    std::vector<ResBlock> enc_blocks;
    std::vector<Conv2dLayer> down;  // stride-2 conv between levels
    ResBlock mid1, mid2;
    std::vector<ResBlock> dec_blocks;
    std::vector<Conv2dLayer> up;  // conv after nearest 2x
    GroupNormLayer out_gn;
    Conv2dLayer out_conv;

    explicit UNet(const UNetConfig& c, Rng& rng) : cfg(c) {
        DAG_CHECK(c.time_embed_dim % 2 == 0, config, "time_embed_dim must be even");
        for (int k : c.effective_taps())
            DAG_CHECK(k >= 1 && k <= c.decoder_blocks(), config, "tap index out of range");
        int L = c.levels();
        auto ch = [&](int l) { return static_cast<int64_t>(c.base_channels) * c.channel_mults[l]; };
        time1 = LinearLayer::make(params, "unet.time.0", c.time_embed_dim, c.time_embed_dim, rng);
        time2 = LinearLayer::make(params, "unet.time.1", c.time_embed_dim, c.time_embed_dim, rng);
        stem = Conv2dLayer::make(params, "unet.stem", c.in_channels, ch(0), 3, 1, 1, rng);
        int64_t cur = ch(0);
        for (int l = 0; l < L; ++l) {
            for (int b = 0; b < c.blocks_per_level; ++b) {
                enc_blocks.push_back(ResBlock::make(params, "unet.enc" + std::to_string(l) + "." + std::to_string(b),
                                                    cur, ch(l), c.time_embed_dim, c.groups, rng));
                cur = ch(l);
            }
            if (l + 1 < L) {
                down.push_back(Conv2dLayer::make(params, "unet.down" + std::to_string(l), cur, ch(l + 1), 3, 2, 1, rng));
                cur = ch(l + 1);
            }
        }
        mid1 = ResBlock::make(params, "unet.mid.0", cur, cur, c.time_embed_dim, c.groups, rng);
        mid2 = ResBlock::make(params, "unet.mid.1", cur, cur, c.time_embed_dim, c.groups, rng);
        for (int l = L - 1; l >= 0; --l) {
            for (int b = 0; b < c.blocks_per_level; ++b) {
                dec_blocks.push_back(ResBlock::make(params, "unet.dec" + std::to_string(l) + "." + std::to_string(b),
                                                    cur + ch(l), ch(l), c.time_embed_dim, c.groups, rng));
                cur = ch(l);
            }
            if (l > 0) {
                up.push_back(Conv2dLayer::make(params, "unet.up" + std::to_string(l), cur, ch(l - 1), 3, 1, 1, rng));
                cur = ch(l - 1);
            }
        }
        out_gn = GroupNormLayer::make(params, "unet.out.gn", cur, c.groups);
        out_conv = Conv2dLayer::make(params, "unet.out.conv", cur, c.in_channels, 3, 1, 1, rng, /*zero=*/true);
    }

    // eps prediction; if `features` is non-null, fills it with the configured
    // decoder taps (same tape, differentiable w.r.t. x)
    Tensor forward(const Tensor& x, const std::vector<int>& t_per_sample,
                   FeatureBundle* features = nullptr) const {
        DAG_CHECK(x.ndim() == 4 && x.dim(1) == cfg.in_channels, contract,
                  "unet: expected input [N," + std::to_string(cfg.in_channels) + ",H,W]");
        DAG_CHECK(t_per_sample.size() == static_cast<size_t>(x.dim(0)), contract,
                  "unet: one timestep per sample required");
        int L = cfg.levels();
        int64_t div = int64_t(1) << (L - 1);
        DAG_CHECK(x.dim(2) % div == 0 && x.dim(3) % div == 0, config,
                  "unet: spatial dims must be divisible by " + std::to_string(div));

        Tensor temb = timestep_embedding_batch(t_per_sample, cfg.time_embed_dim);
        temb = time2(silu(time1(temb)));

        std::vector<Tensor> skips;
        Tensor h = stem(x);
        size_t ei = 0;
        for (int l = 0; l < L; ++l) {
            for (int b = 0; b < cfg.blocks_per_level; ++b) {
                h = enc_blocks[ei++].forward(h, temb);
                skips.push_back(h);
            }
            if (l + 1 < L) h = down[l](h);
        }
        h = mid1.forward(h, temb);
        h = mid2.forward(h, temb);

        std::vector<int> want = cfg.effective_taps();
        if (features) {
            features->t_per_sample = t_per_sample;
            features->tap_indices.clear();
            features->taps.clear();
        }
        size_t di = 0;
        int k = 0;
        for (int l = L - 1; l >= 0; --l) {
            for (int b = 0; b < cfg.blocks_per_level; ++b) {
                Tensor s = skips.back();
                skips.pop_back();
                h = dec_blocks[di++].forward(concat_channels({h, s}), temb);
                ++k;
                if (features && std::find(want.begin(), want.end(), k) != want.end()) {
                    features->tap_indices.push_back(k);
                    features->taps.push_back(h);
                }
            }
            if (l > 0) {
                h = upsample(h, UpsampleMode::nearest, h.dim(2) * 2, h.dim(3) * 2);
                h = up[static_cast<size_t>(L - 1 - l)](h);
            }
        }
        return out_conv(silu(out_gn(h)));
    }
};

// each selected tap bilinearly upsampled to target_hw, concatenated along
// channels in ascending-k order
inline Tensor aggregate_features(const FeatureBundle& bundle, const std::vector<int>& selected,
                                 int64_t target_h, int64_t target_w) {
    DAG_CHECK(!selected.empty(), config, "aggregate_features: empty tap selection");
    std::vector<Tensor> parts;
    for (int k : selected) {
        const Tensor& f = bundle.tap(k);
        if (f.dim(2) == target_h && f.dim(3) == target_w)
            parts.push_back(f);
        else
            parts.push_back(upsample(f, UpsampleMode::bilinear, target_h, target_w));
    }
    return concat_channels(parts);
}

// gradient-free adapter for the samplers
struct UNetDenoiser : DenoiseModel {
    const UNet* net;
    explicit UNetDenoiser(const UNet& n) : net(&n) {}
    Tensor eps(const Tensor& x_t, int t) override {
        std::vector<int> ts(static_cast<size_t>(x_t.dim(0)), t);
        return net->forward(x_t, ts);
    }
};

}  // namespace dag
