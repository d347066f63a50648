#include <doctest.h>

#include <random>

#include "mgbp/generator.hpp"
#include "mgbp/ops.hpp"
#include "generator_oracle.hpp"
#include "test_util.hpp"

using namespace mgbp;
using mgbp::testing::random_tensor;
using mgbp::testing::random_weights;
using mgbp::testing::unrolled;

namespace {

const std::vector<int64_t>& small_schedule(int L) {
    static const std::vector<std::vector<int64_t>> s = {{}, {5}, {6, 5}, {7, 6, 5}};
    return s[static_cast<size_t>(L)];
}

}  // namespace

TEST_CASE("all-zero weights give a zero image") {
    const auto plan = unfold(2, 3, {6, 5, 4}, 3);
    const auto w = GeneratorWeights<float>::zeros(plan);
    const auto rgb = random_tensor({2, 3, 21, 18}, 1);
    const auto y = forward(rgb, NoiseConfig{1.0, 7}, plan, w);
    CHECK(y.shape() == Shape{2, 3, 21, 18});
    for (float v : y.data()) REQUIRE(v == 0.0f);
}

TEST_CASE("zero amplitude silences the noise channel") {
    const auto z = sample_noise<float>(1, 9, 11, {0.0, 123});
    for (float v : z.data()) REQUIRE(v == 0.0f);
    const auto n1 = sample_noise<float>(1, 9, 11, {1.0, 1});
    const auto n2 = sample_noise<float>(1, 9, 11, {1.0, 2});
    CHECK(max_abs_diff(n1, n2) > 0.1);

    const auto plan = unfold(2, 2, {6, 5}, 3);
    const auto w = random_weights<float>(plan, 5);
    const auto rgb = random_tensor({1, 3, 16, 19}, 2);
    const auto a = forward(rgb, NoiseConfig{0.0, 1}, plan, w);
    const auto b = forward(rgb, NoiseConfig{0.0, 999}, plan, w);
    CHECK(max_abs_diff(a, b) == 0.0);
    const auto c = forward(rgb, NoiseConfig{1.0, 999}, plan, w);
    CHECK(max_abs_diff(a, c) > 0.0);
}

TEST_CASE("recursive forward equals the unrolled execution bit for bit") {
    for (int mu : {1, 2}) {
        for (int L : {1, 2, 3}) {
            CAPTURE(mu);
            CAPTURE(L);
            const auto plan = unfold(mu, L, small_schedule(L), 3);
            const auto w = random_weights<float>(plan, static_cast<uint64_t>(100 * mu + L));
            for (auto [h, wd] : {std::pair<int64_t, int64_t>{16, 16}, {19, 23}, {33, 17}}) {
                const auto rgb = random_tensor({2, 3, h, wd}, static_cast<uint64_t>(h * wd));
                const auto noise = sample_noise<float>(2, h, wd, {1.0, 11});
                const auto got = forward(rgb, noise, plan, w);
                const auto want = unrolled(concat_channels<float>({rgb, noise}), plan, w);
                REQUIRE(got.shape() == want.shape());
                CHECK(max_abs_diff(got, want) == 0.0);
            }
        }
    }
}

TEST_CASE("conv shapes follow the plan trace for sizes 16..97") {
    const auto plan = unfold(2, 3, {4, 3, 2}, 3);
    const auto w = GeneratorWeights<float>::zeros(plan);
    for (int64_t side = 16; side <= 97; ++side) {
        const int64_t other = 16 + (side * 7) % 82;
        const auto trace = trace_shapes(plan, side, other);
        std::vector<Shape> seen_in, seen_out;
        ForwardOptions<float> opts;
        opts.observer = [&](const ModuleTag&, const Shape& in, const Shape& out) {
            seen_in.push_back(in);
            seen_out.push_back(out);
        };
        const auto y = forward(Tensor::zeros({1, 3, side, other}), Tensor::zeros({1, 1, side, other}), plan, w, opts);
        REQUIRE(y.shape() == Shape{1, 3, side, other});
        REQUIRE(seen_in.size() == trace.size());
        for (size_t i = 0; i < trace.size(); ++i) {
            CHECK(seen_in[i] == trace[i].input);
            CHECK(seen_out[i] == trace[i].output);
            if (plan.instances[i].tag.kind == ModuleKind::upscale) {
                // Upscale output covers the partner at this level, which is the level size.
                const int level = plan.instances[i].tag.level;
                CHECK(seen_out[i].h >= level_size(plan, level, side));
                CHECK(seen_out[i].w >= level_size(plan, level, other));
            }
        }
    }
}

TEST_CASE("forward is deterministic") {
    const auto plan = unfold(2, 3, {6, 5, 4}, 3);
    const auto w1 = GeneratorWeights<float>::init(plan, 42);
    const auto w2 = GeneratorWeights<float>::init(plan, 42);
    const auto rgb = random_tensor({1, 3, 24, 20}, 3);
    const auto a = forward(rgb, NoiseConfig{1.0, 5}, plan, w1);
    const auto b = forward(rgb, NoiseConfig{1.0, 5}, plan, w2);
    CHECK(max_abs_diff(a, b) == 0.0);
    const auto w3 = GeneratorWeights<float>::init(plan, 43);
    CHECK(max_abs_diff(a, forward(rgb, NoiseConfig{1.0, 5}, plan, w3)) > 0.0);
}

TEST_CASE("init produces zero biases and fan-in scaled weights") {
    const auto plan = desk_plan();
    const auto w = GeneratorWeights<double>::init(plan, 1);
    w.validate(plan);
    const auto& a = w.at({ModuleKind::analysis, 4, {}});
    double ss = 0;
    for (double v : a.weight.data()) ss += v * v;
    const double var = ss / static_cast<double>(a.weight.numel());
    CHECK(var == doctest::Approx(2.0 / (4 * 9)).epsilon(0.2));
    for (const auto& [tag, p] : w.entries()) {
        for (double v : p.bias.data()) REQUIRE(v == 0.0);
    }
}

TEST_CASE("weights and inputs are validated") {
    const auto plan = unfold(2, 2, {6, 5}, 3);
    auto w = GeneratorWeights<float>::zeros(plan);
    CHECK_THROWS_AS(forward(Tensor::zeros({1, 3, 7, 16}), NoiseConfig{}, plan, w), ShapeError);
    CHECK_THROWS_AS(forward(Tensor::zeros({1, 4, 16, 16}), NoiseConfig{}, plan, w), ShapeError);
    CHECK_THROWS_AS(forward(Tensor::zeros({1, 3, 16, 16}), Tensor::zeros({1, 1, 16, 15}), plan, w), ShapeError);

    const auto other = unfold(2, 2, {6, 4}, 3);
    CHECK_THROWS_AS(GeneratorWeights<float>::zeros(other).validate(plan), ShapeError);
    CHECK_THROWS(GeneratorWeights<float>::zeros(unfold(1, 2, {6, 5}, 3)).validate(plan));
    w.at({ModuleKind::synthesis, 0, {}}).weight.mutable_data()[0] = std::nanf("");
    CHECK_THROWS_AS(w.validate(plan), std::invalid_argument);
    CHECK_THROWS(w.at({ModuleKind::upscale, 2, {3}}));
}

TEST_CASE("frozen network is linear") {
    const auto plan = unfold(2, 3, {6, 5, 4}, 3);
    const auto w = random_weights<float>(plan, 9);
    const auto rgb = random_tensor({1, 3, 24, 28}, 4, 0, 1);
    const NoiseConfig noise{1.0, 3};

    const auto r1 = dfv_impulse_response(rgb, noise, plan, w, 10, 12, 1);
    const auto r3 = dfv_impulse_response(rgb, noise, plan, w, 10, 12, 1, 3.0f);
    CHECK(max_abs_diff(scale(r1, 3.0f), r3) < 1e-5);
    double peak = 0;
    for (float v : r1.data()) peak = std::max(peak, std::abs(static_cast<double>(v)));
    CHECK(peak > 0.0);

    ActivationMasks<float> masks;
    ForwardOptions<float> opts;
    opts.record = &masks;
    forward(rgb, noise, plan, w, opts);
    auto p = Tensor::zeros({1, 4, 24, 28});
    auto q = Tensor::zeros({1, 4, 24, 28});
    p.mutable_data()[(0 * 24 + 5) * 28 + 6] = 1.0f;
    q.mutable_data()[(2 * 24 + 17) * 28 + 20] = 1.0f;
    const auto rp = frozen_linear_response(p, masks, plan, w);
    const auto rq = frozen_linear_response(q, masks, plan, w);
    const auto rpq = frozen_linear_response(add(p, q), masks, plan, w);
    CHECK(max_abs_diff(add(rp, rq), rpq) < 1e-5);

    // Arbitrary probes, not only impulses.
    const auto a = random_tensor({1, 4, 24, 28}, 21);
    const auto b = random_tensor({1, 4, 24, 28}, 22);
    const auto lhs = frozen_linear_response(add(scale(a, 0.5f), scale(b, -2.0f)), masks, plan, w);
    const auto rhs = add(scale(frozen_linear_response(a, masks, plan, w), 0.5f),
                         scale(frozen_linear_response(b, masks, plan, w), -2.0f));
    CHECK(max_abs_diff(lhs, rhs) < 1e-5);
}

TEST_CASE("impulse responses translate on a constant image") {
    const auto plan = unfold(2, 3, {6, 5, 4}, 3);
    const auto w = random_weights<float>(plan, 12);
    const int64_t side = 96;
    const Tensor rgb({1, 3, side, side}, 0.5f);
    const NoiseConfig noise{0.0, 0};
    // Coarsest-level lattice period is 4.
    const int64_t r0 = 40, c0 = 40, dr = 8, dc = 12;
    const auto a = dfv_impulse_response(rgb, noise, plan, w, r0, c0, 0);
    const auto b = dfv_impulse_response(rgb, noise, plan, w, r0 + dr, c0 + dc, 0);
    const int64_t radius = 16;
    double worst = 0, peak = 0;
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t y = -radius; y <= radius; ++y)
            for (int64_t x = -radius; x <= radius; ++x) {
                const double va = a.at(0, ch, r0 + y, c0 + x);
                const double vb = b.at(0, ch, r0 + dr + y, c0 + dc + x);
                worst = std::max(worst, std::abs(va - vb));
                peak = std::max(peak, std::abs(va));
            }
    CHECK(peak > 0.0);
    CHECK(worst < 1e-5);
}

TEST_CASE("dfv rejects pixels outside the image") {
    const auto plan = unfold(1, 2, {4, 3}, 3);
    const auto w = GeneratorWeights<float>::zeros(plan);
    const auto rgb = Tensor::zeros({1, 3, 16, 16});
    CHECK_THROWS_AS(dfv_impulse_response(rgb, NoiseConfig{}, plan, w, 16, 0, 0), std::out_of_range);
    CHECK_THROWS_AS(dfv_impulse_response(rgb, NoiseConfig{}, plan, w, 0, -1, 0), std::out_of_range);
    CHECK_THROWS_AS(dfv_impulse_response(rgb, NoiseConfig{}, plan, w, 0, 0, 4), std::out_of_range);
}

TEST_CASE("gradient of the mean output matches finite differences") {
    const auto plan = unfold(2, 3, {8, 6, 4}, 3);
    auto w = GeneratorWeights<double>::init(plan, 77);
    // Non-zero biases so bias gradients are exercised on an active network.
    uint64_t seed = 500;
    for (auto& [tag, p] : w.entries()) p.bias = random_tensor<double>(p.bias.shape(), seed++, 0.0, 0.1);
    w.set_requires_grad(true);
    const auto rgb = random_tensor<double>({1, 3, 17, 18}, 6, 0, 1);
    const auto noise = sample_noise<double>(1, 17, 18, {1.0, 4});

    auto loss = mean(forward(rgb, noise, plan, w));
    loss.backward();

    std::mt19937_64 rng(3);
    int checked = 0, failed = 0;
    for (auto* param : w.parameters()) {
        const auto analytic = std::vector<double>(param->grad().begin(), param->grad().end());
        std::uniform_int_distribution<size_t> pick(0, static_cast<size_t>(param->numel()) - 1);
        std::vector<size_t> idx = {pick(rng), pick(rng), pick(rng), pick(rng)};
        const auto r = mgbp::testing::check_gradient(
            *param, idx,
            [&] {
                NoGradGuard g;
                return mean(forward(rgb, noise, plan, w)).item();
            },
            1e-6, 1e-3, 1e-9, analytic);
        checked += r.checked;
        failed += r.failed;
    }
    CHECK(checked >= 100);
    CHECK(failed == 0);
}
