#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dag/ops.hpp"
#include "dag/rng.hpp"

namespace dag {

// Named parameter registry. Modules register tensors at construction; the
// registry drives checkpoint IO, requires_grad toggling and the optimizer.
// Registration order is construction order and is part of the checkpoint
// layout.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor add(const std::string& name, Tensor t) {
        t.set_requires_grad(true);
        items.emplace_back(name, t);
        return t;
    }

    Tensor* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }

    void set_requires_grad(bool rg) {
        for (auto& [n, t] : items) t.set_requires_grad(rg);
    }

    void zero_grads() {
        for (auto& [n, t] : items) t.zero_grad();
    }

    int64_t numel() const {
        int64_t n = 0;
        for (auto& [nm, t] : items) n += t.numel();
        return n;
    }
};

namespace init {

inline Tensor normal_fan_in(const Shape& s, int64_t fan_in, Rng& rng) {
    float stdev = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return Tensor::randn(s, rng, stdev);
}

}  // namespace init

struct LinearLayer {
    Tensor w, b;

    static LinearLayer make(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                            Rng& rng, bool zero = false) {
        LinearLayer l;
        l.w = ps.add(prefix + ".w", zero ? Tensor::zeros({out, in}) : init::normal_fan_in({out, in}, in, rng));
        l.b = ps.add(prefix + ".b", Tensor::zeros({out}));
        return l;
    }

    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1, pad = 0;

    static Conv2dLayer make(ParamStore& ps, const std::string& prefix, int64_t cin, int64_t cout,
                            int64_t k, int stride, int pad, Rng& rng, bool zero = false) {
        Conv2dLayer c;
        c.stride = stride;
        c.pad = pad;
        int64_t fan_in = cin * k * k;
        c.w = ps.add(prefix + ".w",
                     zero ? Tensor::zeros({cout, cin, k, k}) : init::normal_fan_in({cout, cin, k, k}, fan_in, rng));
        c.b = ps.add(prefix + ".b", Tensor::zeros({cout}));
        return c;
    }

    Tensor operator()(const Tensor& x) const { return add_channel_bias(conv2d(x, w, stride, pad), b); }
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int groups = 1;

    static GroupNormLayer make(ParamStore& ps, const std::string& prefix, int64_t channels, int groups) {
        // largest divisor of channels not exceeding the requested group count
        while (channels % groups) --groups;
        GroupNormLayer g;
        g.groups = groups;
        g.gamma = ps.add(prefix + ".g", Tensor::full({channels}, 1.0f));
        g.beta = ps.add(prefix + ".b", Tensor::zeros({channels}));
        return g;
    }

    Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }
};

struct BatchNorm1dLayer {
    Tensor gamma, beta;

    static BatchNorm1dLayer make(ParamStore& ps, const std::string& prefix, int64_t dim) {
        BatchNorm1dLayer b;
        b.gamma = ps.add(prefix + ".g", Tensor::full({dim}, 1.0f));
        b.beta = ps.add(prefix + ".b", Tensor::zeros({dim}));
        return b;
    }

    Tensor operator()(const Tensor& x, const BnStats* fixed = nullptr, BnStats* out = nullptr) const {
        return batch_norm(x, gamma, beta, 1e-5f, fixed, out);
    }
};

// Adam with f32 state, fixed parameter order. Missing grads count as zero.
struct Adam {
    float lr;
    float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    int64_t step_count = 0;
    ParamStore* params;
    std::vector<std::vector<float>> m, v;

    Adam(ParamStore& ps, float lr_) : lr(lr_), params(&ps) {
        m.resize(ps.items.size());
        v.resize(ps.items.size());
        for (size_t i = 0; i < ps.items.size(); ++i) {
            m[i].assign(static_cast<size_t>(ps.items[i].second.numel()), 0.0f);
            v[i].assign(static_cast<size_t>(ps.items[i].second.numel()), 0.0f);
        }
    }

    void step() {
        ++step_count;
        float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step_count));
        float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step_count));
        for (size_t i = 0; i < params->items.size(); ++i) {
            Tensor& p = params->items[i].second;
            float* pd = p.mutable_data();
            const std::vector<float>& g = p.grad();
            int64_t n = p.numel();
            for (int64_t j = 0; j < n; ++j) {
                float gj = g.empty() ? 0.0f : g[j];
                m[i][j] = beta1 * m[i][j] + (1.0f - beta1) * gj;
                v[i][j] = beta2 * v[i][j] + (1.0f - beta2) * gj * gj;
                float mh = m[i][j] / bc1;
                float vh = v[i][j] / bc2;
                pd[j] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
        params->zero_grads();
    }
};

}  // namespace dag
