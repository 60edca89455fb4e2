#include "doctest.h"

#include <cmath>

#include "dag/gradcheck.hpp"
#include "dag/unet.hpp"

using namespace dag;

TEST_CASE("timestep embedding values") {
    Tensor e0 = timestep_embedding(0, 8);
    for (int i = 0; i < 4; ++i) {
        CHECK(e0.data()[i] == 0.0f);       // sines
        CHECK(e0.data()[4 + i] == 1.0f);   // cosines
    }

    Tensor e1 = timestep_embedding(1, 16);
    Tensor e2 = timestep_embedding(2, 16);
    for (int i = 0; i < 8; ++i) CHECK(e1.data()[i] != e2.data()[i]);  // all sine coords differ

    Tensor e100 = timestep_embedding(100, 256);
    CHECK(std::fabs(e100.data()[0] - std::sin(100.0)) <= 1e-6);

    CHECK_THROWS_AS(timestep_embedding(0, 7), Error);
}

namespace {

UNetConfig tiny_cfg() {
    UNetConfig c;
    c.in_channels = 1;
    c.base_channels = 8;
    c.channel_mults = {1, 2};
    c.blocks_per_level = 2;
    c.time_embed_dim = 32;
    c.groups = 4;
    return c;
}

}  // namespace

TEST_CASE("unet output shape matches input and passes are bitwise reproducible") {
    Rng rng(51);
    UNet net(tiny_cfg(), rng);
    Rng xr(52);
    Tensor x = Tensor::randn({2, 1, 8, 8}, xr);
    Tensor e1 = net.forward(x, {3, 700});
    CHECK(e1.shape() == x.shape());
    Tensor e2 = net.forward(x, {3, 700});
    CHECK(std::vector<float>(e1.data(), e1.data() + e1.numel()) ==
          std::vector<float>(e2.data(), e2.data() + e2.numel()));
}

TEST_CASE("feature taps are pure reads and shaped by config arithmetic") {
    Rng rng(53);
    UNetConfig cfg = tiny_cfg();
    UNet net(cfg, rng);
    Rng xr(54);
    Tensor x = Tensor::randn({1, 1, 8, 8}, xr);

    Tensor plain = net.forward(x, {100});
    FeatureBundle fb;
    Tensor tapped = net.forward(x, {100}, &fb);
    CHECK(std::vector<float>(plain.data(), plain.data() + plain.numel()) ==
          std::vector<float>(tapped.data(), tapped.data() + tapped.numel()));

    REQUIRE(fb.taps.size() == 4);  // 2 levels x 2 blocks
    // deepest tap: base 8 * mult 2 = 16 channels at 4x4
    CHECK(fb.taps[0].dim(1) == 16);
    CHECK(fb.taps[0].dim(2) == 4);
    CHECK(cfg.tap_channels(1) == 16);
    CHECK(cfg.tap_channels(4) == 8);
    // shallower taps have resolution >= deeper taps
    for (size_t i = 1; i < fb.taps.size(); ++i) CHECK(fb.taps[i].dim(2) >= fb.taps[i - 1].dim(2));
}

TEST_CASE("unet gradient w.r.t. input matches finite differences at 8x8") {
    Rng rng(55);
    UNet net(tiny_cfg(), rng);
    net.params.set_requires_grad(false);
    Rng xr(56);
    Tensor x = Tensor::randn({1, 1, 8, 8}, xr);
    x.set_requires_grad(true);
    double rel = gradcheck_rel_error([&] { return mean_all(mul(net.forward(x, {40}), net.forward(x, {40}))); }, x, 1e-3f);
    INFO("unet gradcheck rel err " << rel);
    CHECK(rel <= 1e-3);
}

TEST_CASE("a loss on aggregated features reaches the input with nonzero gradient") {
    Rng rng(57);
    UNet net(tiny_cfg(), rng);
    net.params.set_requires_grad(false);
    Rng xr(58);
    Tensor x = Tensor::randn({1, 1, 8, 8}, xr);
    x.set_requires_grad(true);

    Tape tape;
    {
        TapeScope scope(tape);
        FeatureBundle fb;
        net.forward(x, {200}, &fb);
        Tensor agg = aggregate_features(fb, {1, 2, 3, 4}, 8, 8);
        CHECK(agg.dim(1) == 16 + 16 + 8 + 8);
        tape.backward(mean_all(mul(agg, agg)));
    }
    REQUIRE(x.has_grad());
    double norm = 0;
    for (float g : x.grad()) norm += double(g) * g;
    CHECK(norm > 0.0);
}

TEST_CASE("aggregate_features edge cases") {
    Rng rng(59);
    UNet net(tiny_cfg(), rng);
    Rng xr(60);
    Tensor x = Tensor::randn({1, 1, 8, 8}, xr);
    FeatureBundle fb;
    net.forward(x, {10}, &fb);

    // single tap already at target size passes through unchanged
    Tensor one = aggregate_features(fb, {4}, fb.tap(4).dim(2), fb.tap(4).dim(3));
    CHECK(std::vector<float>(one.data(), one.data() + one.numel()) ==
          std::vector<float>(fb.tap(4).data(), fb.tap(4).data() + fb.tap(4).numel()));

    // constant-valued tap stays constant after upsampling
    FeatureBundle cfb = fb;
    cfb.taps[0] = Tensor::full(fb.taps[0].shape(), 1.25f);
    Tensor up = aggregate_features(cfb, {1}, 8, 8);
    for (int64_t i = 0; i < up.numel(); ++i) CHECK(up.data()[i] == doctest::Approx(1.25f));

    CHECK_THROWS_AS(aggregate_features(fb, {}, 8, 8), Error);
}

TEST_CASE("unet rejects indivisible resolution") {
    Rng rng(61);
    UNet net(tiny_cfg(), rng);
    Tensor x = Tensor::zeros({1, 1, 6, 6});  // 6 not divisible by 2 levels... by 2^(2-1)=2 it is; use 7
    Tensor x7 = Tensor::zeros({1, 1, 7, 7});
    CHECK_THROWS_AS(net.forward(x7, {0}), Error);
    (void)x;
}
