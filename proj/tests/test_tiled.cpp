#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mgbp/ops.hpp"
#include "mgbp/resample.hpp"
#include "mgbp/tiled.hpp"
#include "test_util.hpp"

using namespace mgbp;
using mgbp::testing::random_tensor;

namespace {

const PatchFn identity = [](const Tensor& rgb, const Tensor&) { return rgb.clone(); };

struct SmallModel {
    NetworkPlan plan = unfold(2, 3, {6, 5, 4}, 3);
    GeneratorWeights<float> weights = GeneratorWeights<float>::init(plan, 8);
    PatchFn fn() const {
        return [this](const Tensor& rgb, const Tensor& noise) { return forward(rgb, noise, plan, weights); };
    }
};

}  // namespace

TEST_CASE("tile origins follow the clamping rule") {
    const auto one = plan_tiles(64, 64, 64, 16);
    REQUIRE(one.origins.size() == 1);
    CHECK(one.origins[0] == std::pair<int64_t, int64_t>{0, 0});

    CHECK(tile_positions(1000, 667, 128) == std::vector<int64_t>{0, 128, 256, 333});
    CHECK(tile_positions(100, 64, 36) == std::vector<int64_t>{0, 36});
    CHECK(tile_positions(1000, 767, 64) == std::vector<int64_t>{0, 64, 128, 192, 233});
    CHECK(tile_positions(128, 64, 64) == std::vector<int64_t>{0, 64});

    const auto g = plan_tiles(1000, 1000, 667, 128);
    CHECK(g.origins.size() == 16);
    CHECK(g.origins.back() == std::pair<int64_t, int64_t>{333, 333});

    CHECK_THROWS_AS(plan_tiles(50, 100, 64, 16), std::invalid_argument);
    CHECK_THROWS_AS(plan_tiles(100, 100, 64, 0), std::invalid_argument);
    CHECK_THROWS_AS(plan_tiles(100, 100, 64, 65), std::invalid_argument);
}

TEST_CASE("every pixel is covered and patches stay inside") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const int64_t patch = std::uniform_int_distribution<int64_t>(2, 40)(rng);
        const int64_t h = std::uniform_int_distribution<int64_t>(patch, 120)(rng);
        const int64_t w = std::uniform_int_distribution<int64_t>(patch, 120)(rng);
        const int64_t stride = std::uniform_int_distribution<int64_t>(1, patch)(rng);
        const auto g = plan_tiles(h, w, patch, stride);
        std::vector<int> cover(static_cast<size_t>(h * w), 0);
        for (auto [r, c] : g.origins) {
            REQUIRE(r >= 0);
            REQUIRE(c >= 0);
            REQUIRE(r + patch <= h);
            REQUIRE(c + patch <= w);
            for (int64_t y = r; y < r + patch; ++y)
                for (int64_t x = c; x < c + patch; ++x) ++cover[y * w + x];
        }
        REQUIRE(std::all_of(cover.begin(), cover.end(), [](int v) { return v > 0; }));
    }
}

TEST_CASE("hamming window values") {
    for (int64_t n : {2, 5, 64, 667, 767}) {
        const auto w = hamming_window(n);
        CHECK(std::abs(w.front() - 0.08) < 1e-12);
        CHECK(std::abs(w.back() - 0.08) < 1e-12);
        for (double v : w) REQUIRE(v > 0.0);
        for (int64_t i = 0; i < n; ++i) REQUIRE(std::abs(w[i] - w[n - 1 - i]) < 1e-12);
    }
    const auto odd = hamming_window(65);
    CHECK(std::abs(odd[32] - 1.0) < 1e-12);
    CHECK(*std::max_element(odd.begin(), odd.end()) == odd[32]);

    const auto w2 = hamming_window_2d(65);
    CHECK(std::abs(w2[0] - 0.0064) < 1e-12);
    CHECK(std::abs(w2[64] - 0.0064) < 1e-12);
    CHECK(std::abs(w2[65 * 65 - 1] - 0.0064) < 1e-12);
    CHECK(std::abs(w2[32 * 65 + 32] - 1.0) < 1e-12);
    for (int64_t r = 0; r < 65; r += 7)
        for (int64_t c = 0; c < 65; c += 5) CHECK(w2[r * 65 + c] == odd[r] * odd[c]);
    CHECK_THROWS(hamming_window(1));
}

TEST_CASE("identity patches reproduce the image") {
    const auto img = random_tensor({1, 3, 200, 300}, 1, 0, 1);
    for (int64_t stride : {16, 32, 64}) {
        TileConfig cfg;
        cfg.patch = 64;
        cfg.stride = stride;
        cfg.scale = 1;
        cfg.noise_amplitude = 1.0;
        CHECK(max_abs_diff(upscale_image(img, cfg, identity), img) < 1e-5);
    }
    // With the 16x pre-upscale the identity returns the bicubic image.
    const auto lr = random_tensor({1, 3, 6, 9}, 2, 0, 1);
    TileConfig cfg;
    cfg.patch = 48;
    cfg.stride = 20;
    const auto big = bicubic(lr, ScaleFactor::up(16));
    CHECK(max_abs_diff(upscale_image(lr, cfg, identity), big) < 1e-5);
}

TEST_CASE("non-overlapping tiles are independent outside clamp bands") {
    const SmallModel m;
    const auto img = random_tensor({1, 3, 80, 100}, 3, 0, 1);
    const auto noise = sample_noise<float>(1, 80, 100, {1.0, 3});
    const auto grid = plan_tiles(80, 100, 32, 32);  // rows {0, 32, 48}, cols {0, 32, 64, 68}
    const auto out = blend_patches(img, noise, grid, m.fn());
    // Patch (32, 32) owns rows 32..47 and cols 32..63 alone.
    const auto own = m.fn()(crop_region(img, 32, 32, 32, 32), crop_region(noise, 32, 32, 32, 32));
    double worst = 0;
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t r = 0; r < 16; ++r)
            for (int64_t c = 0; c < 32; ++c)
                worst = std::max(worst, std::abs(static_cast<double>(out.at(0, ch, 32 + r, 32 + c)) - own.at(0, ch, r, c)));
    CHECK(worst < 1e-6);
}

TEST_CASE("overlapping patches read identical noise") {
    const auto img = random_tensor({1, 3, 90, 70}, 5, 0, 1);
    TileConfig cfg;
    cfg.patch = 32;
    cfg.stride = 12;
    cfg.scale = 1;
    cfg.noise_amplitude = 1.0;
    cfg.seed = 77;
    std::vector<Tensor> seen;
    const PatchFn rec = [&](const Tensor& rgb, const Tensor& noise) {
        seen.push_back(noise.clone());
        return rgb.clone();
    };
    upscale_image(img, cfg, rec);
    const auto grid = plan_tiles(90, 70, 32, 12);
    REQUIRE(seen.size() == grid.origins.size());
    // Rebuild the full field from the first patch that covers each pixel, then compare all others.
    std::vector<float> field(90 * 70, std::nanf(""));
    size_t compared = 0;
    for (size_t k = 0; k < seen.size(); ++k) {
        const auto [top, left] = grid.origins[k];
        for (int64_t r = 0; r < 32; ++r)
            for (int64_t c = 0; c < 32; ++c) {
                float& f = field[(top + r) * 70 + left + c];
                const float v = seen[k].at(0, 0, r, c);
                if (std::isnan(f)) {
                    f = v;
                } else {
                    REQUIRE(f == v);
                    ++compared;
                }
            }
    }
    CHECK(compared > 10000);
    const auto global = sample_noise<float>(1, 90, 70, {1.0, 77});
    for (size_t i = 0; i < field.size(); ++i) REQUIRE(field[i] == global.data()[i]);
}

TEST_CASE("result does not depend on patch order or thread count") {
    const SmallModel m;
    const auto img = random_tensor({1, 3, 70, 90}, 6, 0, 1);
    TileConfig cfg;
    cfg.patch = 32;
    cfg.stride = 16;
    cfg.scale = 1;
    cfg.noise_amplitude = 1.0;
    const auto base = upscale_image(img, cfg, m.fn());
    const size_t count = plan_tiles(70, 90, 32, 16).origins.size();
    std::vector<size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    CHECK(max_abs_diff(upscale_image(img, cfg, m.fn(), order), base) < 1e-5);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(9));
    CHECK(max_abs_diff(upscale_image(img, cfg, m.fn(), order), base) < 1e-5);
    CHECK_THROWS(upscale_image(img, cfg, m.fn(), std::vector<size_t>{0, 1}));

    cfg.threads = 3;
    CHECK(max_abs_diff(upscale_image(img, cfg, m.fn()), base) == 0.0);
    cfg.threads = 1;
    CHECK(max_abs_diff(upscale_image(img, m.plan, m.weights, cfg), base) == 0.0);
}

TEST_CASE("peak memory grows only with the image buffers") {
    const SmallModel m;
    TileConfig cfg;
    cfg.patch = 32;
    cfg.scale = 1;
    cfg.noise_amplitude = 1.0;
    auto peak_for = [&](int64_t h, int64_t w, int64_t stride) {
        const auto img = random_tensor({1, 3, h, w}, 7, 0, 1);
        cfg.stride = stride;
        const int64_t before = memory_stats().live_bytes;
        reset_peak_memory();
        const auto y = upscale_image(img, cfg, m.fn());
        return memory_stats().peak_bytes - before;
    };
    const int64_t p1 = peak_for(64, 96, 16);
    const int64_t p2 = peak_for(128, 96, 16);
    const int64_t p4 = peak_for(128, 192, 16);
    constexpr double area = 64 * 96;
    // Growth per added pixel is a handful of image-sized buffers.
    CHECK(static_cast<double>(p2 - p1) / area <= 64.0);
    CHECK(static_cast<double>(p4 - p2) / (2 * area) <= 64.0);
    // What is left over is bounded by the patch working set.
    CHECK(static_cast<double>(p1) - 64.0 * area < 400.0 * 32 * 32 * 4);
    // Denser overlap costs nothing extra.
    CHECK(peak_for(128, 192, 4) == doctest::Approx(static_cast<double>(p4)).epsilon(0.01));
}

TEST_CASE("ensembles average their members") {
    const SmallModel m;
    const auto lr = random_tensor({1, 3, 4, 5}, 8, 0, 1);
    TileConfig cfg;
    cfg.patch = 32;
    cfg.stride = 16;
    cfg.noise_amplitude = 0.5;
    const auto single = upscale_image(lr, m.plan, m.weights, cfg);
    CHECK(single.shape() == Shape{1, 3, 64, 80});
    CHECK(max_abs_diff(ensemble_upscale(lr, {{m.plan, m.weights}}, cfg), single) == 0.0);
    CHECK(max_abs_diff(ensemble_upscale(lr, {{m.plan, m.weights}, {m.plan, m.weights}, {m.plan, m.weights}}, cfg),
                       single) < 1e-6);

    std::vector<System> triple;
    for (int f : {3, 5, 7}) {
        auto plan = unfold(2, 3, {6, 5, 4}, f);
        triple.push_back({plan, GeneratorWeights<float>::init(plan, static_cast<uint64_t>(f))});
    }
    const auto mixed = ensemble_upscale(lr, triple, cfg);
    auto want = upscale_image(lr, triple[0].plan, triple[0].weights, cfg);
    want = add(want, upscale_image(lr, triple[1].plan, triple[1].weights, cfg));
    want = add(want, upscale_image(lr, triple[2].plan, triple[2].weights, cfg));
    CHECK(max_abs_diff(mixed, scale(want, 1.0f / 3.0f)) < 1e-6);
    CHECK_THROWS(ensemble_upscale(lr, {}, cfg));
}

TEST_CASE("tiled inference validates its inputs") {
    const SmallModel m;
    TileConfig cfg;
    cfg.patch = 64;
    cfg.stride = 32;
    CHECK_THROWS_AS(upscale_image(random_tensor({1, 3, 3, 8}, 1), m.plan, m.weights, cfg), ShapeError);
    cfg.patch = 8;
    cfg.stride = 8;
    CHECK_THROWS_AS(upscale_image(random_tensor({1, 3, 3, 8}, 1), m.plan, m.weights, cfg), ShapeError);
    cfg.patch = 32;
    auto bad = GeneratorWeights<float>::zeros(unfold(2, 3, {6, 5, 3}, 3));
    CHECK_THROWS(upscale_image(random_tensor({1, 3, 3, 8}, 1), m.plan, bad, cfg));
    CHECK_THROWS_AS(upscale_image(random_tensor({1, 1, 3, 8}, 1), cfg, identity), ShapeError);
}
