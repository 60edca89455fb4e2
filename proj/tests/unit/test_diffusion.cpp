#include "doctest.h"

#include <cmath>
#include <vector>

#include "dag/gauss.hpp"
#include "dag/gradcheck.hpp"
#include "dag/sampler.hpp"
#include "dag/schedule.hpp"

using namespace dag;

TEST_CASE("linear schedule tables") {
    DiffusionSchedule s = linear_schedule(1000, 1e-4f, 0.02f);
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-6));
    CHECK(s.alpha_bar[999] < s.alpha_bar[0]);
    for (int t = 1; t < s.T; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);

    // direct cumulative product oracle in double
    double abar = 1.0;
    for (int t = 0; t < 1000; ++t) abar *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 999.0);
    CHECK(std::fabs(s.alpha_bar[999] - abar) / abar <= 1e-6);

    for (int t = 1; t < s.T; ++t) {
        CHECK(s.posterior_var[t] > 0.0f);
        CHECK(s.posterior_var[t] < s.beta[t]);
    }
    CHECK(s.posterior_var[0] == 0.0f);

    CHECK_THROWS_AS(linear_schedule(1, 1e-4f, 0.02f), Error);
    CHECK_THROWS_AS(linear_schedule(100, 0.0f, 0.02f), Error);
    CHECK_THROWS_AS(linear_schedule(100, 0.03f, 0.02f), Error);
}

TEST_CASE("q_sample closed form") {
    DiffusionSchedule s = linear_schedule(1000);
    Rng rng(21);
    Tensor x0 = Tensor::randn({8}, rng);
    Tensor zero = Tensor::zeros({8});
    int t = 300;
    Tensor xt = q_sample(s, x0, t, zero);
    for (int i = 0; i < 8; ++i) CHECK(xt.data()[i] == doctest::Approx(s.sqrt_alpha_bar(t) * x0.data()[i]));

    // tiny beta at t=0: x_t ~ x0
    Tensor eps = Tensor::randn({8}, rng);
    Tensor x1 = q_sample(s, x0, 0, eps);
    for (int i = 0; i < 8; ++i) CHECK(std::fabs(x1.data()[i] - x0.data()[i]) <= 0.05f);

    CHECK_THROWS_AS(q_sample(s, x0, 1000, eps), Error);
}

TEST_CASE("q_sample Monte-Carlo moments match closed form") {
    DiffusionSchedule s = linear_schedule(1000);
    Rng rng(22);
    int t = 400;
    const int n = 100000;
    float x0v = 0.7f;
    Tensor x0 = Tensor::scalar(x0v);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor eps = Tensor::randn({1}, rng);
        float v = q_sample(s, x0, t, eps).item();
        sum += v;
        sum2 += double(v) * v;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    double target_mean = s.sqrt_alpha_bar(t) * x0v;
    double target_var = 1.0 - s.alpha_bar[t];
    double se_mean = std::sqrt(target_var / n);
    double se_var = target_var * std::sqrt(2.0 / (n - 1));
    CHECK(std::fabs(mean - target_mean) <= 3 * se_mean);
    CHECK(std::fabs(var - target_var) <= 3 * se_var);
}

TEST_CASE("iterated one-step noising matches the closed form (moments)") {
    // x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps has the same first two
    // moments as the closed-form forward process
    DiffusionSchedule s = linear_schedule(1000);
    Rng rng(23);
    const int n = 20000;
    const float x0 = 0.7f;
    std::vector<int> checkpoints = {10, 100};
    for (int tc : checkpoints) {
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            float x = x0;
            for (int t = 0; t <= tc; ++t)
                x = std::sqrt(s.alpha[t]) * x + std::sqrt(s.beta[t]) * rng.normal();
            sum += x;
            sum2 += double(x) * x;
        }
        double mean = sum / n, var = sum2 / n - mean * mean;
        double tm = s.sqrt_alpha_bar(tc) * x0;
        double tv = 1.0 - s.alpha_bar[tc];
        CHECK(std::fabs(mean - tm) <= 3 * std::sqrt(tv / n));
        CHECK(std::fabs(var - tv) <= 3 * tv * std::sqrt(2.0 / (n - 1)));
    }
}

namespace {

struct EchoModel {
    // analytic eps for known x0: recovers the exact eps injected by q_sample
    DiffusionSchedule s;
    Tensor x0;
    Tensor operator()(const Tensor& x_t, int t) const {
        Tensor num = sub(x_t, scale(x0, s.sqrt_alpha_bar(t)));
        return scale(num, 1.0f / s.sqrt_one_minus_alpha_bar(t));
    }
};

struct ZeroModel {
    Tensor operator()(const Tensor& x_t, int) const { return Tensor::zeros(x_t.shape()); }
};

}  // namespace

TEST_CASE("training loss on oracle and zero mock models") {
    DiffusionSchedule s = linear_schedule(1000);
    Rng rng(24);
    Tensor x0 = Tensor::randn({16}, rng);

    EchoModel echo{s, x0};
    for (int i = 0; i < 10; ++i) {
        Tensor loss = training_loss(echo, s, x0, rng);
        CHECK(loss.item() <= 1e-8f);
    }

    ZeroModel zero;
    double acc = 0.0;
    const int reps = 2000;
    for (int i = 0; i < reps; ++i) acc += training_loss(zero, s, x0, rng).item();
    // mean of eps^2 is 1 in expectation
    CHECK(acc / reps == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("training loss gradient matches finite differences on a 2-parameter model") {
    // toy model eps_hat = a * x_t + b realized as a 1x1 linear over pixel rows
    DiffusionSchedule s = linear_schedule(100);
    Rng rng(25);
    int t = 37;
    Tensor x0 = Tensor::randn({1, 1, 1, 6}, rng);
    Tensor eps = Tensor::randn({1, 1, 1, 6}, rng);

    Tensor a = Tensor::from({1, 1}, {0.4f});
    Tensor b = Tensor::from({1}, {-0.2f});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto fwd = [&](const Tensor& x_t, int) {
        Tensor out = linear(pixels_from_image(x_t), a, b);
        return image_from_pixels(out, x_t.dim(0), x_t.dim(2), x_t.dim(3));
    };
    auto loss_fn = [&] { return denoising_loss_at(fwd, s, x0, t, eps); };
    CHECK(gradcheck_rel_error(loss_fn, a, 1e-3f) <= 1e-3);
    CHECK(gradcheck_rel_error(loss_fn, b, 1e-3f) <= 1e-3);
}

TEST_CASE("ddpm_step determinism and null-hook identity") {
    DiffusionSchedule s = linear_schedule(200);
    GaussianWorld w{3, {0.0f, 0.0f, 0.0f}, 1.0f};
    GaussOracleModel model(w, s);
    Rng r1(31), r2(31);
    Tensor x = Tensor::randn({3}, r1);
    Tensor x2 = Tensor::from({3}, std::vector<float>(x.data(), x.data() + 3));

    GuidanceHook zero_hook = [](const Tensor& xt, int) { return Tensor::zeros(xt.shape()); };
    Rng rs1(5), rs2(5);
    Tensor a = ddpm_step(model, s, x, 150, nullptr, rs1);
    Tensor b = ddpm_step(model, s, x2, 150, zero_hook, rs2);
    for (int i = 0; i < 3; ++i) CHECK(a.data()[i] == b.data()[i]);

    // t=0 step is deterministic: no draw from rng
    Rng r3(99);
    Tensor c = ddpm_step(model, s, x, 0, nullptr, r3);
    Rng r4(1234);
    Tensor d = ddpm_step(model, s, x, 0, nullptr, r4);
    for (int i = 0; i < 3; ++i) CHECK(c.data()[i] == d.data()[i]);
}

TEST_CASE("gauss oracle: ddpm and ddim sampling reproduce target moments (quick)") {
    // quick version of the acceptance-scale run: looser bands, fewer draws
    Rng root(41);
    const int n = 1500;

    DiffusionSchedule s = linear_schedule(1000);
    GaussianWorld w{2, {0.5f, -0.25f}, 1.0f};
    MomentReport ddpm = oracle_sampling_test(w, s, SamplerKind::ddpm, n, root);
    for (int d = 0; d < 2; ++d) {
        CHECK(std::fabs(ddpm.mean[d] - w.mu[d]) <= 3.0 / std::sqrt(double(n)) + 0.01);
        CHECK(std::fabs(ddpm.var[d] - 1.0) <= 0.15);
    }

    // DDIM-25 runs on a gentler schedule: the even-stride 25-step map has a
    // schedule-dependent variance contraction (about -14% at beta_end=0.02,
    // about -5% at 0.003, exact affine analysis); sigma2=1/mu=0 keeps the
    // marginal stationary so only that discretization effect remains
    DiffusionSchedule s25 = linear_schedule(1000, 1e-4f, 0.003f);
    GaussianWorld w0{2, {0.0f, 0.0f}, 1.0f};
    MomentReport ddim = oracle_sampling_test(w0, s25, SamplerKind::ddim, n, root, 25, 0.0f);
    for (int d = 0; d < 2; ++d) {
        CHECK(std::fabs(ddim.mean[d]) <= 3.0 / std::sqrt(double(n)) + 0.01);
        CHECK(std::fabs(ddim.var[d] - 1.0) <= 0.15);
    }
}

TEST_CASE("ddim with eta=1 and steps=T matches ancestral ddpm trajectory-wise") {
    // with abar_prev consecutive, the eta=1 DDIM update is algebraically the
    // ddpm posterior step, so matched-seed trajectories coincide up to
    // floating-point association
    DiffusionSchedule s = linear_schedule(200);
    GaussianWorld w{3, {0.4f, -0.3f, 0.0f}, 1.0f};
    GaussOracleModel model(w, s);
    for (uint64_t i = 0; i < 50; ++i) {
        Rng r1 = Rng(7).substream(i), r2 = Rng(7).substream(i);
        Tensor a = ddpm_sample(model, s, {3}, nullptr, r1);
        Tensor b = ddim_sample(model, s, {3}, 200, 1.0f, nullptr, r2);
        for (int d = 0; d < 3; ++d) CHECK(std::fabs(a.data()[d] - b.data()[d]) <= 2e-3f);
    }
}

TEST_CASE("optimal_eps formulas") {
    DiffusionSchedule s = linear_schedule(1000);
    GaussianWorld w{4, {0.0f, 0.0f, 0.0f, 0.0f}, 1.0f};
    Rng rng(42);
    Tensor x = Tensor::randn({4}, rng);
    int t = 333;
    Tensor e = optimal_eps(w, s, x, t);
    for (int i = 0; i < 4; ++i)
        CHECK(e.data()[i] == doctest::Approx(s.sqrt_one_minus_alpha_bar(t) * x.data()[i]));

    // abar -> 1 at t=0: eps* -> 0
    Tensor e0 = optimal_eps(w, s, x, 0);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(e0.data()[i]) <= 0.02f);
}

TEST_CASE("optimal_eps minimizes the simplified objective (Monte Carlo)") {
    DiffusionSchedule s = linear_schedule(1000);
    GaussianWorld w{1, {0.3f}, 1.0f};
    Rng rng(43);
    int t = 250;
    const int n = 100000;
    double loss_star = 0.0, loss_pert = 0.0;
    for (int i = 0; i < n; ++i) {
        float x0 = w.mu[0] + rng.normal();
        float eps = rng.normal();
        float xt = s.sqrt_alpha_bar(t) * x0 + s.sqrt_one_minus_alpha_bar(t) * eps;
        Tensor xt_t = Tensor::scalar(xt);
        float estar = optimal_eps(w, s, xt_t, t).item();
        loss_star += double(eps - estar) * (eps - estar);
        float epert = estar + 0.05f;
        loss_pert += double(eps - epert) * (eps - epert);
    }
    CHECK(loss_star / n < loss_pert / n);
}

TEST_CASE("constant guidance hook shifts the ddpm terminal mean monotonically") {
    DiffusionSchedule s = linear_schedule(100);
    GaussianWorld w{1, {0.0f}, 1.0f};
    Rng root(44);
    const int n = 2000;

    auto mean_with_hook = [&](float g) {
        GuidanceHook hook = nullptr;
        if (g != 0.0f) hook = [g](const Tensor& xt, int) { return Tensor::full(xt.shape(), g); };
        MomentReport r = oracle_sampling_test(w, s, SamplerKind::ddpm, n, root, 25, 0.0f, hook);
        return r.mean[0];
    };
    double m0 = mean_with_hook(0.0f);
    double mp = mean_with_hook(0.05f);
    double mpp = mean_with_hook(0.1f);
    double mn = mean_with_hook(-0.05f);
    CHECK(mp > m0);
    CHECK(mpp > mp);
    CHECK(mn < m0);  // negated hook reverses the shift
}

TEST_CASE("ddim determinism and null-hook identity") {
    DiffusionSchedule s = linear_schedule(100);
    GaussianWorld w{3, {0.1f, 0.2f, 0.3f}, 1.0f};
    GaussOracleModel model(w, s);

    Rng r1(7), r2(7);
    Tensor a = ddim_sample(model, s, {3}, 10, 0.0f, nullptr, r1);
    GuidanceHook zero_hook = [](const Tensor& xt, int) { return Tensor::zeros(xt.shape()); };
    Tensor b = ddim_sample(model, s, {3}, 10, 0.0f, zero_hook, r2);
    for (int i = 0; i < 3; ++i) CHECK(a.data()[i] == b.data()[i]);

    Rng r3(7);
    Tensor c = ddim_sample(model, s, {3}, 10, 0.0f, nullptr, r3);
    for (int i = 0; i < 3; ++i) CHECK(a.data()[i] == c.data()[i]);

    CHECK_THROWS_AS(ddim_sample(model, s, {3}, 0, 0.0f, nullptr, r3), Error);
    CHECK_THROWS_AS(ddim_sample(model, s, {3}, 10, -1.0f, nullptr, r3), Error);
}

TEST_CASE("ddim timestep subsequence is evenly spaced and includes 0") {
    auto ts = ddim_timesteps(1000, 25);
    REQUIRE(ts.size() == 25);
    CHECK(ts[0] == 0);
    CHECK(ts[1] == 40);
    CHECK(ts[24] == 960);
}
