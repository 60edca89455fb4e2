#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "json.hpp"

#include "dag/container.hpp"
#include "dag/parallel.hpp"
#include "dag/rng.hpp"
#include "dag/tensor.hpp"

namespace dag {

constexpr float kMaxDepth = 10.0f;

// intensity of a unit-albedo surface at a given depth; strictly decreasing,
// positive over (0, 10]
inline float shade(float depth) { return 1.0f - 0.09f * depth; }

struct SceneOptions {
    int min_boxes = 1;
    int max_boxes = 4;
};

// one synthetic room: grayscale image in [0,1] plus analytic depth in (0,10]
struct SceneSample {
    Tensor image;  // [1,H,W]
    Tensor depth;  // [1,H,W]
    uint64_t seed = 0;
};

struct SceneBox {
    float depth = 5.0f;
    int x0 = 0, y0 = 0, w = 3, h = 3;
    float albedo = 1.0f;
};

// Paints the wall/floor background then the boxes with a minimum-depth
// occlusion rule: every pixel carries the depth of the nearest covering
// surface and intensity albedo * shade(depth). Background albedo is 1.
inline SceneSample compose_scene(int H, int W, int horizon, float wall_depth, float floor_near,
                                 const std::vector<SceneBox>& boxes) {
    SceneSample s;
    s.image = Tensor::zeros({1, H, W});
    s.depth = Tensor::zeros({1, H, W});
    float* img = s.image.mutable_data();
    float* dep = s.depth.mutable_data();

    for (int y = 0; y < H; ++y) {
        float d = wall_depth;
        if (y > horizon)  // floor recedes from the wall line toward the viewer
            d = wall_depth + (floor_near - wall_depth) * static_cast<float>(y - horizon) / (H - 1 - horizon);
        for (int x = 0; x < W; ++x) {
            dep[y * W + x] = d;
            img[y * W + x] = shade(d);
        }
    }
    for (const SceneBox& b : boxes) {
        for (int y = std::max(0, b.y0); y < std::min(H, b.y0 + b.h); ++y)
            for (int x = std::max(0, b.x0); x < std::min(W, b.x0 + b.w); ++x) {
                if (b.depth < dep[y * W + x]) {  // nearer surface wins
                    dep[y * W + x] = b.depth;
                    img[y * W + x] = b.albedo * shade(b.depth);
                }
            }
    }
    return s;
}

// Deterministic synthetic scene: a wall/floor depth gradient plus 1-4
// axis-aligned boxes at random depths in [1,9]. Boxes draw their albedo from
// 4 discrete levels, so depth is not invertible from intensity alone.
//
// RNG draw order: horizon fraction, wall depth, floor near-depth, box count,
// then per box (depth, width, height, x0, y0, albedo index).
inline SceneSample generate_scene(uint64_t seed, int H, int W, const SceneOptions& opt = {}) {
    DAG_CHECK(H >= 16 && W >= 16, config, "generate_scene: H and W must be >= 16");
    Rng rng(seed ^ 0x5ce4e5f0u);

    int horizon = static_cast<int>(H * (0.30 + 0.25 * rng.uniform()));
    float wall_depth = 8.5f + 1.3f * static_cast<float>(rng.uniform());
    float floor_near = 1.5f + 1.5f * static_cast<float>(rng.uniform());

    static const float albedo_levels[4] = {0.55f, 0.70f, 0.85f, 1.00f};
    int n_boxes = opt.min_boxes +
                  (opt.max_boxes > opt.min_boxes
                       ? static_cast<int>(rng.uniform_int(opt.max_boxes - opt.min_boxes + 1))
                       : 0);
    std::vector<SceneBox> boxes(static_cast<size_t>(n_boxes));
    for (SceneBox& b : boxes) {
        b.depth = 1.0f + 8.0f * static_cast<float>(rng.uniform());
        b.w = 3 + static_cast<int>(rng.uniform_int(std::max(1, W / 2 - 2)));
        b.h = 3 + static_cast<int>(rng.uniform_int(std::max(1, H / 2 - 2)));
        b.x0 = static_cast<int>(rng.uniform_int(std::max(1, W - b.w)));
        b.y0 = static_cast<int>(rng.uniform_int(std::max(1, H - b.h)));
        b.albedo = albedo_levels[rng.uniform_int(4)];
    }
    SceneSample s = compose_scene(H, W, horizon, wall_depth, floor_near, boxes);
    s.seed = seed;
    return s;
}

struct DatasetIndex {
    uint64_t seed = 0;
    int H = 0, W = 0;
    std::vector<int64_t> labeled;
    std::vector<int64_t> unlabeled;
};

// n samples from seeds seed..seed+n-1 in one container (`images`, `depths`,
// `seeds`) plus an index.json with the labeled/unlabeled split
inline void generate_dataset(const std::string& dir, int n, uint64_t seed, int H, int W,
                             double labeled_fraction = 0.8, const SceneOptions& opt = {}) {
    DAG_CHECK(n >= 1, config, "generate_dataset: n must be >= 1");
    Tensor images = Tensor::zeros({n, 1, H, W});
    Tensor depths = Tensor::zeros({n, 1, H, W});
    Tensor seeds = Tensor::zeros({n});
    int64_t hw = static_cast<int64_t>(H) * W;
    parallel_for(n, [&](int64_t i) {
        SceneSample s = generate_scene(seed + static_cast<uint64_t>(i), H, W, opt);
        std::copy(s.image.data(), s.image.data() + hw, images.mutable_data() + i * hw);
        std::copy(s.depth.data(), s.depth.data() + hw, depths.mutable_data() + i * hw);
        seeds.mutable_data()[i] = static_cast<float>(i);  // offset from base seed
    });

    TensorContainer c;
    c.add("images", images);
    c.add("depths", depths);
    c.add("seeds", seeds);
    c.write(dir);

    int64_t n_labeled = std::max<int64_t>(1, static_cast<int64_t>(n * labeled_fraction));
    if (n_labeled > n) n_labeled = n;
    nlohmann::ordered_json idx;
    idx["format_version"] = 1;
    idx["seed"] = seed;
    idx["height"] = H;
    idx["width"] = W;
    auto labeled = nlohmann::ordered_json::array();
    auto unlabeled = nlohmann::ordered_json::array();
    for (int64_t i = 0; i < n; ++i) (i < n_labeled ? labeled : unlabeled).push_back(i);
    idx["labeled"] = labeled;
    idx["unlabeled"] = unlabeled;
    std::ofstream f(std::filesystem::path(dir) / "index.json", std::ios::binary);
    if (!f) fail(ErrorKind::io, "cannot write " + dir + "/index.json");
    f << idx.dump(2) << "\n";
}

struct Dataset {
    Tensor images;  // [N,1,H,W]
    Tensor depths;  // [N,1,H,W]
    DatasetIndex index;

    int64_t size() const { return images.dim(0); }
    int H() const { return static_cast<int>(images.dim(2)); }
    int W() const { return static_cast<int>(images.dim(3)); }

    Tensor image(int64_t i) const { return slice_sample(images, i); }
    Tensor depth(int64_t i) const { return slice_sample(depths, i); }

    // gradient-free view of sample i as [1,C,H,W]
    static Tensor slice_sample(const Tensor& t, int64_t i) {
        DAG_CHECK(i >= 0 && i < t.dim(0), contract, "dataset: sample index out of range");
        int64_t chw = t.numel() / t.dim(0);
        Tensor out = Tensor::zeros({1, t.dim(1), t.dim(2), t.dim(3)});
        std::copy(t.data() + i * chw, t.data() + (i + 1) * chw, out.mutable_data());
        return out;
    }

    static Dataset load(const std::string& dir) {
        TensorContainer c = TensorContainer::read(dir);
        Dataset d;
        d.images = c.get("images");
        d.depths = c.get("depths");
        std::ifstream f(std::filesystem::path(dir) / "index.json", std::ios::binary);
        if (!f) fail(ErrorKind::io, "cannot read " + dir + "/index.json");
        nlohmann::json idx;
        try {
            f >> idx;
        } catch (const std::exception& e) {
            fail(ErrorKind::io, std::string("bad index.json: ") + e.what());
        }
        d.index.seed = idx.value("seed", 0ull);
        d.index.H = idx.value("height", 0);
        d.index.W = idx.value("width", 0);
        d.index.labeled = idx.at("labeled").get<std::vector<int64_t>>();
        d.index.unlabeled = idx.at("unlabeled").get<std::vector<int64_t>>();
        return d;
    }
};

}  // namespace dag
