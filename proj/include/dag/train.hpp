#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dag/config.hpp"
#include "dag/container.hpp"
#include "dag/depth.hpp"
#include "dag/guidance.hpp"
#include "dag/scene.hpp"
#include "dag/unet.hpp"

namespace dag {

// ------------------------------------------------------------- checkpoint IO

// Parameters (and optionally Adam state) as one container; meta.json carries
// whatever the caller needs to rebuild the module.
inline void save_checkpoint(const std::string& dir, const ParamStore& params, const Adam* opt,
                            nlohmann::ordered_json meta) {
    TensorContainer c;
    for (auto& [name, t] : params.items) c.add(name, t);
    if (opt) {
        for (size_t i = 0; i < params.items.size(); ++i) {
            c.add("opt.m." + params.items[i].first,
                  Tensor::from(params.items[i].second.shape(), opt->m[i]));
            c.add("opt.v." + params.items[i].first,
                  Tensor::from(params.items[i].second.shape(), opt->v[i]));
        }
        meta["opt_step_count"] = opt->step_count;
    }
    c.write(dir);
    std::ofstream f(std::filesystem::path(dir) / "meta.json", std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write " + dir + "/meta.json");
    f << meta.dump(2) << "\n";
}

inline nlohmann::json read_meta(const std::string& dir) {
    std::ifstream f(std::filesystem::path(dir) / "meta.json", std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot read " + dir + "/meta.json");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail(ErrorKind::io, std::string("bad meta.json: ") + e.what());
    }
    return j;
}

inline void load_params_from(const TensorContainer& c, ParamStore& params) {
    for (auto& [name, t] : params.items) {
        Tensor stored = c.get(name);
        DAG_CHECK(stored.shape() == t.shape(), io, "checkpoint shape mismatch for " + name);
        std::copy(stored.data(), stored.data() + stored.numel(), t.mutable_data());
    }
}

inline void load_opt_state(const TensorContainer& c, const ParamStore& params, Adam& opt,
                           const nlohmann::json& meta) {
    for (size_t i = 0; i < params.items.size(); ++i) {
        Tensor m = c.get("opt.m." + params.items[i].first);
        Tensor v = c.get("opt.v." + params.items[i].first);
        opt.m[i].assign(m.data(), m.data() + m.numel());
        opt.v[i].assign(v.data(), v.data() + v.numel());
    }
    opt.step_count = meta.value("opt_step_count", int64_t{0});
}

inline nlohmann::ordered_json unet_config_meta(const UNetConfig& c) {
    nlohmann::ordered_json j;
    j["in_channels"] = c.in_channels;
    j["base_channels"] = c.base_channels;
    j["channel_mults"] = c.channel_mults;
    j["blocks_per_level"] = c.blocks_per_level;
    j["time_embed_dim"] = c.time_embed_dim;
    j["groups"] = c.groups;
    j["tap_indices"] = c.tap_indices;
    return j;
}

inline UNetConfig unet_config_from_meta(const nlohmann::json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels");
    c.base_channels = j.at("base_channels");
    c.channel_mults = j.at("channel_mults").get<std::vector<int>>();
    c.blocks_per_level = j.at("blocks_per_level");
    c.time_embed_dim = j.at("time_embed_dim");
    c.groups = j.at("groups");
    c.tap_indices = j.at("tap_indices").get<std::vector<int>>();
    return c;
}

inline nlohmann::ordered_json schedule_meta(int T, float beta_start, float beta_end) {
    nlohmann::ordered_json j;
    j["T"] = T;
    j["beta_start"] = beta_start;
    j["beta_end"] = beta_end;
    return j;
}

inline DiffusionSchedule schedule_from_meta(const nlohmann::json& j) {
    return linear_schedule(j.at("T"), j.at("beta_start"), j.at("beta_end"));
}

// ---------------------------------------------------------------- denoiser training

struct LossCurve {
    std::vector<std::pair<int64_t, float>> points;

    void write_csv(const std::string& path, const std::string& cfg_hash) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) fail(ErrorKind::io, "cannot write " + path);
        f << "# config-hash: " << cfg_hash << "\n";
        f << "step,loss\n";
        char buf[64];
        for (auto& [s, l] : points) {
            std::snprintf(buf, sizeof(buf), "%lld,%.8g\n", static_cast<long long>(s), l);
            f << buf;
        }
    }

    // mean of the last 10% of logged steps must fall below the first 10%
    bool decreased() const {
        size_t k = std::max<size_t>(1, points.size() / 10);
        double head = 0, tail = 0;
        for (size_t i = 0; i < k; ++i) {
            head += points[i].second;
            tail += points[points.size() - 1 - i].second;
        }
        return tail < head;
    }
};

// Denoising training on pre-normalized data [N,1,H,W] (already in the model's
// [-1,1] domain). Per step each batch element draws its own (index, t, eps)
// from the step's substream, so a resumed run replays the exact stream.
inline LossCurve train_denoiser(UNet& net, Adam& opt, const Tensor& data,
                                const std::vector<int64_t>& pool, const DiffusionSchedule& sched,
                                int start_step, int steps, int batch, const Rng& root,
                                int log_every = 50) {
    DAG_CHECK(!pool.empty(), config, "train_denoiser: empty sample pool");
    net.params.set_requires_grad(true);
    LossCurve curve;
    int64_t C = data.dim(1), H = data.dim(2), W = data.dim(3);
    int64_t chw = C * H * W;

    for (int step = start_step; step < steps; ++step) {
        Rng rng = root.substream(static_cast<uint64_t>(step));
        Tensor x_t = Tensor::zeros({batch, C, H, W});
        Tensor eps = Tensor::zeros({batch, C, H, W});
        std::vector<int> ts(batch);
        for (int b = 0; b < batch; ++b) {
            int64_t idx = pool[rng.uniform_int(static_cast<int64_t>(pool.size()))];
            int t = static_cast<int>(rng.uniform_int(sched.T));
            ts[b] = t;
            float sab = sched.sqrt_alpha_bar(t);
            float somab = sched.sqrt_one_minus_alpha_bar(t);
            const float* x0 = data.data() + idx * chw;
            float* xe = eps.mutable_data() + b * chw;
            float* xt = x_t.mutable_data() + b * chw;
            for (int64_t i = 0; i < chw; ++i) {
                float e = rng.normal();
                xe[i] = e;
                xt[i] = sab * x0[i] + somab * e;
            }
        }
        Tape tape;
        float loss_val;
        {
            TapeScope scope(tape);
            Tensor loss = mse_loss(net.forward(x_t, ts), eps);
            loss_val = loss.item();
            DAG_CHECK(std::isfinite(loss_val), numeric,
                      "training: NaN loss at step " + std::to_string(step));
            tape.backward(loss);
        }
        opt.step();
        if (step % log_every == 0 || step + 1 == steps) curve.points.emplace_back(step, loss_val);
    }
    return curve;
}

// image diffusion: x0 = 2*image - 1
inline Tensor images_to_model_domain(const Tensor& images) {
    Tensor out = images.clone();
    float* p = out.mutable_data();
    for (int64_t i = 0; i < out.numel(); ++i) p[i] = 2.0f * p[i] - 1.0f;
    return out;
}

// depth prior: depths (0,10] -> [-1,1]
inline Tensor depths_to_prior_domain(const Tensor& depths, int resolution) {
    Tensor d = depths;
    if (d.dim(2) != resolution || d.dim(3) != resolution)
        d = upsample(d, UpsampleMode::bilinear, resolution, resolution);
    Tensor out = d.clone();
    float* p = out.mutable_data();
    for (int64_t i = 0; i < out.numel(); ++i) p[i] = p[i] * (2.0f / kMaxDepth) - 1.0f;
    return out;
}

}  // namespace dag
