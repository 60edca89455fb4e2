#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "dag/scene.hpp"

using namespace dag;

TEST_CASE("zero boxes gives the pure background gradient, monotone below the horizon") {
    SceneOptions none{0, 0};
    SceneSample s = generate_scene(99, 32, 32, none);
    const float* dep = s.depth.data();
    // find the horizon: first row where depth starts changing
    int horizon = -1;
    for (int y = 1; y < 32; ++y)
        if (dep[y * 32] != dep[0]) {
            horizon = y - 1;
            break;
        }
    REQUIRE(horizon >= 0);
    for (int y = horizon + 1; y < 32; ++y) CHECK(dep[y * 32] < dep[(y - 1) * 32]);
    // rows are constant across x
    for (int y = 0; y < 32; ++y)
        for (int x = 1; x < 32; ++x) CHECK(dep[y * 32 + x] == dep[y * 32]);
}

TEST_CASE("occlusion rule: overlapping boxes keep the minimum depth") {
    std::vector<SceneBox> boxes = {
        {5.0f, 4, 4, 10, 10, 0.7f},  // farther, painted first
        {2.0f, 8, 8, 10, 10, 0.55f},
    };
    SceneSample s = compose_scene(32, 32, 12, 9.5f, 2.0f, boxes);
    const float* dep = s.depth.data();
    const float* img = s.image.data();
    // overlap region carries depth 2 and the nearer box's appearance
    for (int y = 8; y < 14; ++y)
        for (int x = 8; x < 14; ++x) {
            CHECK(dep[y * 32 + x] == 2.0f);
            CHECK(img[y * 32 + x] == doctest::Approx(0.55f * shade(2.0f)));
        }
    // non-overlapped part of the far box keeps depth 5
    CHECK(dep[5 * 32 + 5] == 5.0f);

    // painting order does not matter under the min rule
    std::vector<SceneBox> reversed = {boxes[1], boxes[0]};
    SceneSample s2 = compose_scene(32, 32, 12, 9.5f, 2.0f, reversed);
    CHECK(std::memcmp(s.depth.data(), s2.depth.data(), sizeof(float) * s.depth.numel()) == 0);
}

TEST_CASE("same seed is bitwise identical; ranges hold over many seeds") {
    for (uint64_t seed : {1ull, 77ull, 123456ull}) {
        SceneSample a = generate_scene(seed, 16, 16);
        SceneSample b = generate_scene(seed, 16, 16);
        CHECK(std::memcmp(a.image.data(), b.image.data(), sizeof(float) * a.image.numel()) == 0);
        CHECK(std::memcmp(a.depth.data(), b.depth.data(), sizeof(float) * a.depth.numel()) == 0);
    }
    for (uint64_t seed = 0; seed < 200; ++seed) {
        SceneSample s = generate_scene(seed, 16, 16);
        for (int64_t i = 0; i < s.depth.numel(); ++i) {
            CHECK(s.depth.data()[i] > 0.0f);
            CHECK(s.depth.data()[i] <= kMaxDepth);
            CHECK(s.image.data()[i] >= 0.0f);
            CHECK(s.image.data()[i] <= 1.0f);
        }
    }
}

TEST_CASE("shade monotonicity: nearer background pixels are strictly brighter") {
    SceneOptions none{0, 0};
    SceneSample s = generate_scene(5, 32, 32, none);
    const float* dep = s.depth.data();
    const float* img = s.image.data();
    for (int64_t i = 0; i < s.depth.numel(); ++i)
        for (int64_t j = i + 1; j < std::min<int64_t>(i + 40, s.depth.numel()); ++j) {
            if (dep[i] < dep[j]) CHECK(img[i] > img[j]);
            if (dep[i] > dep[j]) CHECK(img[i] < img[j]);
        }
}

TEST_CASE("affine fit from shade to depth on background pixels has AbsRel <= 0.05") {
    // least squares d ~ a*s + b over the background pixels of many scenes
    double sxx = 0, sx = 0, sxy = 0, sy = 0;
    int64_t n = 0;
    std::vector<std::pair<float, float>> pts;
    SceneOptions none{0, 0};
    for (uint64_t seed = 0; seed < 50; ++seed) {
        SceneSample s = generate_scene(seed, 16, 16, none);
        for (int64_t i = 0; i < s.depth.numel(); ++i) {
            double sv = s.image.data()[i], dv = s.depth.data()[i];
            pts.emplace_back(static_cast<float>(sv), static_cast<float>(dv));
            sxx += sv * sv;
            sx += sv;
            sxy += sv * dv;
            sy += dv;
            ++n;
        }
    }
    double det = sxx * n - sx * sx;
    double a = (sxy * n - sx * sy) / det;
    double b = (sxx * sy - sx * sxy) / det;
    double absrel = 0;
    for (auto [sv, dv] : pts) absrel += std::fabs(a * sv + b - dv) / dv;
    absrel /= static_cast<double>(n);
    CHECK(absrel <= 0.05);
}

TEST_CASE("dataset round-trips and disjoint seed ranges share no images") {
    std::string dir = (std::filesystem::temp_directory_path() / "dag_test_ds1").string();
    generate_dataset(dir, 1, 7, 16, 16);
    Dataset d = Dataset::load(dir);
    SceneSample s = generate_scene(7, 16, 16);
    CHECK(std::memcmp(d.image(0).data(), s.image.data(), sizeof(float) * s.image.numel()) == 0);
    CHECK(std::memcmp(d.depth(0).data(), s.depth.data(), sizeof(float) * s.depth.numel()) == 0);
    CHECK(d.index.labeled.size() == 1);
    CHECK(d.index.unlabeled.empty());

    // pairwise hashes across disjoint seed ranges
    auto hash_img = [](const SceneSample& x) {
        uint64_t h = 1469598103934665603ull;
        const unsigned char* p = reinterpret_cast<const unsigned char*>(x.image.data());
        for (int64_t i = 0; i < x.image.numel() * 4; ++i) h = (h ^ p[i]) * 1099511628211ull;
        return h;
    };
    std::set<uint64_t> seen;
    for (uint64_t seed = 1000; seed < 1100; ++seed) seen.insert(hash_img(generate_scene(seed, 16, 16)));
    CHECK(seen.size() == 100);
    for (uint64_t seed = 5000; seed < 5100; ++seed)
        CHECK(seen.count(hash_img(generate_scene(seed, 16, 16))) == 0);

    CHECK_THROWS_AS(generate_dataset(dir, 0, 7, 16, 16), Error);
}
