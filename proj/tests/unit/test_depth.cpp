#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "dag/depth.hpp"

using namespace dag;

namespace {

UNetConfig tiny_cfg() {
    UNetConfig c;
    c.in_channels = 1;
    c.base_channels = 8;
    c.channel_mults = {1, 2};
    c.blocks_per_level = 1;
    c.time_embed_dim = 32;
    c.groups = 4;
    return c;
}

}  // namespace

TEST_CASE("depth predictions are pixel-shaped and strictly inside (0, 10)") {
    Rng rng(91);
    UNetConfig cfg = tiny_cfg();
    DepthHeads heads(cfg, default_strong_taps(cfg), default_weak_taps(cfg), 64, rng);
    CHECK(heads.taps_strong == std::vector<int>{1, 2});
    CHECK(heads.taps_weak == std::vector<int>{2});

    int C = heads.strong.in_dim;
    Tensor f = Tensor::randn({1, C, 6, 5}, rng);
    Tensor d = heads.strong.predict(f, 17);
    CHECK(d.shape() == Shape{1, 1, 6, 5});
    for (int64_t i = 0; i < d.numel(); ++i) {
        CHECK(d.data()[i] > 0.0f);
        CHECK(d.data()[i] < 10.0f);
    }

    Tensor bad = Tensor::randn({1, C + 1, 6, 5}, rng);
    CHECK_THROWS_AS(heads.strong.predict(bad, 17), Error);
}

TEST_CASE("permuting pixels permutes predictions (batch statistics are permutation-invariant)") {
    Rng rng(92);
    UNetConfig cfg = tiny_cfg();
    DepthHeads heads(cfg, default_strong_taps(cfg), default_weak_taps(cfg), 64, rng);
    int C = heads.strong.in_dim;
    int H = 4, W = 4;
    Tensor f = Tensor::randn({1, C, H, W}, rng);
    Tensor d = heads.strong.predict(f, 100);

    // reverse the pixel order in the feature map
    Tensor fr = Tensor::zeros({1, C, H, W});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i)
            fr.mutable_data()[c * H * W + (H * W - 1 - i)] = f.data()[c * H * W + i];
    Tensor dr = heads.strong.predict(fr, 100);
    for (int i = 0; i < H * W; ++i)
        CHECK(dr.data()[H * W - 1 - i] == doctest::Approx(d.data()[i]).epsilon(1e-4));
}

TEST_CASE("pixel-wise purity: with statistics held fixed, distant pixels are untouched") {
    Rng rng(93);
    UNetConfig cfg = tiny_cfg();
    DepthHeads heads(cfg, default_strong_taps(cfg), default_weak_taps(cfg), 64, rng);
    int C = heads.strong.in_dim;
    Tensor f = Tensor::randn({1, C, 4, 4}, rng);

    DepthHeadStats stats;
    Tensor d1 = heads.strong.predict(f, 50, nullptr, &stats);
    Tensor d1_fixed = heads.strong.predict(f, 50, &stats);
    // fixed stats equal batch stats here, so outputs agree bitwise
    CHECK(std::memcmp(d1.data(), d1_fixed.data(), sizeof(float) * d1.numel()) == 0);

    Tensor f2 = f.clone();
    f2.mutable_data()[0] += 3.0f;  // pixel (0,0), first channel
    Tensor d2 = heads.strong.predict(f2, 50, &stats);
    for (int i = 1; i < 16; ++i) CHECK(d2.data()[i] == d1_fixed.data()[i]);
    CHECK(d2.data()[0] != d1_fixed.data()[0]);
}

TEST_CASE("heads learn broadcast ground truth from mock features") {
    // features carry the answer in every channel; joint training should push
    // both branches' L1 near zero well inside 2k steps
    Rng rng(94);
    UNetConfig cfg = tiny_cfg();
    DepthHeads heads(cfg, default_strong_taps(cfg), default_weak_taps(cfg), 64, rng);
    SceneSample scene = generate_scene(3, 16, 16);

    auto broadcast = [&](int C) {
        Tensor f = Tensor::zeros({1, C, 16, 16});
        for (int c = 0; c < C; ++c)
            std::copy(scene.depth.data(), scene.depth.data() + 256, f.mutable_data() + c * 256);
        return scale(f, 0.1f);  // keep the MLP input in a sane range
    };
    Tensor fs = broadcast(heads.strong.in_dim);
    Tensor fw = broadcast(heads.weak.in_dim);
    Tensor y = Tensor::from({1, 1, 16, 16},
                            std::vector<float>(scene.depth.data(), scene.depth.data() + 256));

    heads.params.set_requires_grad(true);
    Adam opt(heads.params, 2e-3f);
    float first = 0, last = 0;
    for (int step = 0; step < 1500; ++step) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = add(l1_loss(heads.strong.predict(fs, 0), y), l1_loss(heads.weak.predict(fw, 0), y));
        if (step == 0) first = loss.item();
        last = loss.item();
        tape.backward(loss);
        opt.step();
    }
    CHECK(first > 1.0f);
    CHECK(last < 0.25f);
}

TEST_CASE("denoiser stays frozen during head training") {
    Rng rng(95);
    UNetConfig cfg = tiny_cfg();
    UNet denoiser(cfg, rng);
    std::vector<float> before;
    for (auto& [n, t] : denoiser.params.items)
        before.insert(before.end(), t.data(), t.data() + t.numel());

    std::string dir = (std::filesystem::temp_directory_path() / "dag_test_depthds").string();
    generate_dataset(dir, 6, 11, 16, 16);
    Dataset data = Dataset::load(dir);
    DiffusionSchedule sched = linear_schedule(100);

    DepthHeads heads(cfg, default_strong_taps(cfg), default_weak_taps(cfg), 64, rng);
    DepthTrainConfig tc;
    tc.steps = 5;
    tc.batch = 2;
    tc.t_max_train = 80;
    tc.lr = 1e-3f;
    train_depth_heads(denoiser, data, data.index.labeled, heads, sched, tc, Rng(1));

    for (auto& [n, t] : denoiser.params.items) CHECK(!t.has_grad());
    std::vector<float> after;
    for (auto& [n, t] : denoiser.params.items)
        after.insert(after.end(), t.data(), t.data() + t.numel());
    CHECK(before == after);

    CHECK_THROWS_AS(train_depth_heads(denoiser, data, {}, heads, sched, tc, Rng(1)), Error);
}

TEST_CASE("a constant head scores the analytic baseline accuracy") {
    std::string dir = (std::filesystem::temp_directory_path() / "dag_test_depthds2").string();
    generate_dataset(dir, 8, 21, 16, 16);
    Dataset data = Dataset::load(dir);
    double c = median_depth(data, data.index.labeled);
    CHECK(c > 0.0);
    CHECK(c <= 10.0);

    // direct enumeration oracle
    std::vector<int64_t> eval_idx = data.index.unlabeled.empty() ? data.index.labeled : data.index.unlabeled;
    double direct = 0.0;
    for (int64_t i : eval_idx) {
        int64_t hits = 0;
        Tensor gt = data.depth(i);
        for (int64_t p = 0; p < gt.numel(); ++p) {
            double g = gt.data()[p];
            double ratio = c > g ? c / g : g / c;
            if (ratio < 1.25) ++hits;
        }
        direct += double(hits) / gt.numel();
    }
    direct /= eval_idx.size();
    CHECK(constant_baseline_accuracy(data, eval_idx, c) == doctest::Approx(direct).epsilon(1e-12));
}
