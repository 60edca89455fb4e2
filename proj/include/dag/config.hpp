#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dag/common.hpp"

namespace dag {

// Flat key-set of every tunable. JSON config files and CLI flags both resolve
// into this struct; unknown keys are rejected. Defaults mirror the reference
// hyperparameters where one exists (depth lr 1e-5, Adam, time embedding 256,
// DDIM 25 steps, w_dc = w_dp = 40, tau ~ U[0,25)).
struct RunConfig {
    uint64_t seed = 1;
    int threads = 0;  // 0 = hardware default

    // diffusion schedule
    int T = 1000;
    float beta_start = 1e-4f;
    float beta_end = 0.02f;

    // image U-Net
    int image_size = 32;
    int unet_base = 32;
    std::vector<int> unet_mults = {1, 2, 4};
    int unet_blocks = 2;
    int time_embed_dim = 256;
    int groups = 8;
    std::vector<int> taps_strong;  // empty = all decoder blocks
    std::vector<int> taps_weak;    // empty = single middle block

    // prior U-Net (depth domain)
    int prior_base = 16;
    std::vector<int> prior_mults = {1, 2};
    int prior_blocks = 2;
    int prior_resolution = 32;

    // diffusion / prior training
    int train_steps = 20000;
    int train_batch = 16;
    float train_lr = 1e-4f;

    // depth-head training
    int depth_labels = 100;
    float depth_lr = 1e-5f;
    int depth_steps = 20000;
    int depth_batch = 8;
    int t_max_train = 800;
    int folds = 10;

    // guidance
    float w_dc = 40.0f;
    float w_dp = 40.0f;
    int tau_max = 25;
    std::string dcg_metric = "l1";

    // sampling
    std::string sampler = "ddim";
    int sample_steps = 25;
    float eta = 0.0f;

    // dataset generation
    int dataset_n = 1000;
    double dataset_labeled_fraction = 0.8;
    int scene_min_boxes = 1;
    int scene_max_boxes = 4;
};

namespace detail {

template <class T>
struct ConfigField {
    const char* name;
    T RunConfig::* member;
};

inline constexpr auto cfg_u64 = std::array{ConfigField<uint64_t>{"seed", &RunConfig::seed}};
inline constexpr auto cfg_int = std::array{
    ConfigField<int>{"threads", &RunConfig::threads},
    ConfigField<int>{"T", &RunConfig::T},
    ConfigField<int>{"image_size", &RunConfig::image_size},
    ConfigField<int>{"unet_base", &RunConfig::unet_base},
    ConfigField<int>{"unet_blocks", &RunConfig::unet_blocks},
    ConfigField<int>{"time_embed_dim", &RunConfig::time_embed_dim},
    ConfigField<int>{"groups", &RunConfig::groups},
    ConfigField<int>{"prior_base", &RunConfig::prior_base},
    ConfigField<int>{"prior_blocks", &RunConfig::prior_blocks},
    ConfigField<int>{"prior_resolution", &RunConfig::prior_resolution},
    ConfigField<int>{"train_steps", &RunConfig::train_steps},
    ConfigField<int>{"train_batch", &RunConfig::train_batch},
    ConfigField<int>{"depth_labels", &RunConfig::depth_labels},
    ConfigField<int>{"depth_steps", &RunConfig::depth_steps},
    ConfigField<int>{"depth_batch", &RunConfig::depth_batch},
    ConfigField<int>{"t_max_train", &RunConfig::t_max_train},
    ConfigField<int>{"folds", &RunConfig::folds},
    ConfigField<int>{"tau_max", &RunConfig::tau_max},
    ConfigField<int>{"sample_steps", &RunConfig::sample_steps},
    ConfigField<int>{"dataset_n", &RunConfig::dataset_n},
    ConfigField<int>{"scene_min_boxes", &RunConfig::scene_min_boxes},
    ConfigField<int>{"scene_max_boxes", &RunConfig::scene_max_boxes},
};
inline constexpr auto cfg_float = std::array{
    ConfigField<float>{"beta_start", &RunConfig::beta_start},
    ConfigField<float>{"beta_end", &RunConfig::beta_end},
    ConfigField<float>{"train_lr", &RunConfig::train_lr},
    ConfigField<float>{"depth_lr", &RunConfig::depth_lr},
    ConfigField<float>{"w_dc", &RunConfig::w_dc},
    ConfigField<float>{"w_dp", &RunConfig::w_dp},
    ConfigField<float>{"eta", &RunConfig::eta},
};
inline constexpr auto cfg_double = std::array{
    ConfigField<double>{"dataset_labeled_fraction", &RunConfig::dataset_labeled_fraction}};
inline constexpr auto cfg_string = std::array{
    ConfigField<std::string>{"dcg_metric", &RunConfig::dcg_metric},
    ConfigField<std::string>{"sampler", &RunConfig::sampler},
};
inline constexpr auto cfg_ints = std::array{
    ConfigField<std::vector<int>>{"unet_mults", &RunConfig::unet_mults},
    ConfigField<std::vector<int>>{"prior_mults", &RunConfig::prior_mults},
    ConfigField<std::vector<int>>{"taps_strong", &RunConfig::taps_strong},
    ConfigField<std::vector<int>>{"taps_weak", &RunConfig::taps_weak},
};

}  // namespace detail

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    for (auto f : detail::cfg_u64) j[f.name] = c.*(f.member);
    for (auto f : detail::cfg_int) j[f.name] = c.*(f.member);
    for (auto f : detail::cfg_float) j[f.name] = c.*(f.member);
    for (auto f : detail::cfg_double) j[f.name] = c.*(f.member);
    for (auto f : detail::cfg_string) j[f.name] = c.*(f.member);
    for (auto f : detail::cfg_ints) j[f.name] = c.*(f.member);
    return j;
}

// strict parse: every key must name a known field
inline void config_apply_json(RunConfig& c, const nlohmann::json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        bool known = false;
        for (auto f : detail::cfg_u64)
            if (key == f.name) { c.*(f.member) = it.value().get<uint64_t>(); known = true; }
        for (auto f : detail::cfg_int)
            if (key == f.name) { c.*(f.member) = it.value().get<int>(); known = true; }
        for (auto f : detail::cfg_float)
            if (key == f.name) { c.*(f.member) = it.value().get<float>(); known = true; }
        for (auto f : detail::cfg_double)
            if (key == f.name) { c.*(f.member) = it.value().get<double>(); known = true; }
        for (auto f : detail::cfg_string)
            if (key == f.name) { c.*(f.member) = it.value().get<std::string>(); known = true; }
        for (auto f : detail::cfg_ints)
            if (key == f.name) { c.*(f.member) = it.value().get<std::vector<int>>(); known = true; }
        if (!known) fail(ErrorKind::config, "unknown config key: " + key);
    }
}

inline RunConfig config_from_file(const std::string& path, RunConfig base = {}) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot read config file " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail(ErrorKind::config, "bad config JSON in " + path + ": " + e.what());
    }
    config_apply_json(base, j);
    return base;
}

// FNV-1a over the canonical dump; stamped into every report
inline std::string config_hash(const RunConfig& c) {
    std::string s = config_to_json(c).dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// resolved config + tool version, written beside every command's outputs
inline void write_resolved_config(const RunConfig& c, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create directory " + dir + ": " + ec.message());
    nlohmann::ordered_json j;
    j["tool_version"] = version();
    j["config_hash"] = config_hash(c);
    j["config"] = config_to_json(c);
    std::ofstream f(fs::path(dir) / "config.json", std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write " + dir + "/config.json");
    f << j.dump(2) << "\n";
}

}  // namespace dag
