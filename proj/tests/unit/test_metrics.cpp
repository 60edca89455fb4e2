#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "dag/metrics.hpp"
#include "dag/scene.hpp"

using namespace dag;

TEST_CASE("frechet distance analytic cases") {
    // identical moments
    std::vector<double> mu{0.3, -0.7}, cov{1.0, 0.2, 0.2, 2.0};
    CHECK(std::fabs(frechet_distance(mu, cov, mu, cov)) <= 1e-5);

    // 1-D N(0,1) vs N(2,1): (mu diff)^2 = 4
    CHECK(frechet_distance({0.0}, {1.0}, {2.0}, {1.0}) == doctest::Approx(4.0).epsilon(1e-9));

    // 1-D N(0,1) vs N(0,4): (sigma1 - sigma2)^2 = 1
    CHECK(frechet_distance({0.0}, {1.0}, {0.0}, {4.0}) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("frechet distance is symmetric and nonnegative on random PSD inputs") {
    Rng rng(81);
    for (int rep = 0; rep < 10; ++rep) {
        int n = 6;
        std::vector<double> b(n * n);
        for (auto& x : b) x = rng.normal();
        std::vector<double> c1(n * n, 0.0), c2(n * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) c1[i * n + j] += b[i * n + k] * b[j * n + k];
        for (auto& x : b) x = rng.normal();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) c2[i * n + j] += b[i * n + k] * b[j * n + k];
        std::vector<double> m1(n), m2(n);
        for (int i = 0; i < n; ++i) {
            m1[i] = rng.normal();
            m2[i] = rng.normal();
        }
        double d12 = frechet_distance(m1, c1, m2, c2);
        double d21 = frechet_distance(m2, c2, m1, c1);
        CHECK(d12 >= -1e-9);
        CHECK(std::fabs(d12 - d21) <= 1e-5 * std::max(1.0, d12));
    }

    std::vector<double> bad{1.0, 0.5, 0.2, 1.0};  // asymmetric beyond 1e-5
    CHECK_THROWS_AS(frechet_distance({0, 0}, bad, {0, 0}, bad), Error);
}

namespace {
std::vector<Tensor> make_depth_set(uint64_t seed0, int n) {
    std::vector<Tensor> set;
    for (int i = 0; i < n; ++i) set.push_back(generate_scene(seed0 + i, 16, 16).depth);
    return set;
}
}  // namespace

TEST_CASE("dfid of a set against itself is ~0 and ordering does not matter") {
    auto set = make_depth_set(100, 96);
    CHECK(std::fabs(dfid(set, set)) <= 1e-5);

    auto ref = make_depth_set(900, 96);
    double d1 = dfid(set, ref);
    CHECK(d1 > 0.0);
    std::vector<Tensor> shuffled = set;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[3], shuffled[60]);
    double d2 = dfid(shuffled, ref);
    CHECK(std::fabs(d1 - d2) <= 1e-6 * std::max(1.0, d1));

    auto tiny = make_depth_set(0, 10);
    CHECK_THROWS_WITH_AS(dfid(tiny, ref), doctest::Contains("96"), Error);
}

TEST_CASE("dfid of a constant depth shift matches the closed form") {
    // embedding is linear, so shifting every depth by c moves the mean by
    // c * P * 1 and leaves covariances unchanged
    EmbeddingSpec spec;
    auto ref = make_depth_set(300, 100);
    std::vector<Tensor> shifted;
    const float c = 0.37f;
    for (const Tensor& d : ref) {
        Tensor s = d.clone();
        for (int64_t i = 0; i < s.numel(); ++i) s.mutable_data()[i] += c;
        shifted.push_back(s);
    }
    double got = dfid(shifted, ref, spec);

    std::vector<float> proj = spec.projection();
    double norm2 = 0.0;
    for (int r = 0; r < spec.out_dim; ++r) {
        double row = 0.0;
        for (int i = 0; i < spec.in_dim; ++i) row += proj[r * spec.in_dim + i];
        norm2 += row * row;
    }
    double expect = double(c) * c * norm2;
    CHECK(got == doctest::Approx(expect).epsilon(1e-3));
}

TEST_CASE("embedding projection is deterministic and row-orthonormal") {
    EmbeddingSpec spec;
    auto p1 = spec.projection();
    auto p2 = spec.projection();
    CHECK(p1 == p2);
    for (int r = 0; r < spec.out_dim; ++r) {
        double nr = 0.0;
        for (int i = 0; i < spec.in_dim; ++i) nr += double(p1[r * spec.in_dim + i]) * p1[r * spec.in_dim + i];
        CHECK(nr == doctest::Approx(1.0).epsilon(1e-4));
        for (int q = 0; q < r; ++q) {
            double dot = 0.0;
            for (int i = 0; i < spec.in_dim; ++i)
                dot += double(p1[r * spec.in_dim + i]) * p1[q * spec.in_dim + i];
            CHECK(std::fabs(dot) <= 1e-4);
        }
    }
}

TEST_CASE("delta accuracy arithmetic") {
    Tensor gt = Tensor::full({1, 1, 2, 2}, 1.0f);
    CHECK(depth_accuracy(gt, gt) == 1.0);

    Tensor p13 = Tensor::full({1, 1, 2, 2}, 1.3f);
    CHECK(depth_accuracy(p13, gt) == 0.0);  // 1.3 >= 1.25 fails

    Rng rng(83);
    Tensor g2 = Tensor::randn({1, 1, 4, 4}, rng);
    for (int64_t i = 0; i < g2.numel(); ++i) g2.mutable_data()[i] = std::fabs(g2.data()[i]) + 0.5f;
    Tensor p2 = scale(g2, 1.2f);
    CHECK(depth_accuracy(p2, g2) == 1.0);  // 1.2 < 1.25 everywhere

    Tensor zero_gt = Tensor::zeros({1});
    CHECK_THROWS_AS(depth_accuracy(Tensor::full({1}, 1.0f), zero_gt), Error);
}

TEST_CASE("abs_rel arithmetic and loop oracle") {
    Tensor gt = Tensor::full({4}, 2.0f);
    CHECK(abs_rel(gt, gt) == 0.0);
    CHECK(abs_rel(scale(gt, 2.0f), gt) == doctest::Approx(1.0));

    Rng rng(84);
    Tensor g = Tensor::randn({32}, rng);
    for (int64_t i = 0; i < g.numel(); ++i) g.mutable_data()[i] = std::fabs(g.data()[i]) + 0.2f;
    Tensor p = Tensor::randn({32}, rng);
    double direct = 0.0;
    for (int i = 0; i < 32; ++i) direct += std::fabs(p.data()[i] - g.data()[i]) / g.data()[i];
    direct /= 32;
    CHECK(std::fabs(abs_rel(p, g) - direct) <= 1e-6);
}
