#include "doctest.h"
#include "test_util.hpp"

using namespace mgbp;
using mgbp::testing::random_tensor;

namespace {

template <typename T>
BasicTensor<T> ones(Shape s) {
    return BasicTensor<T>(s, T(1));
}

double relative_error(const std::vector<double>& got, const std::vector<double>& want) {
    double num = 0, den = 0;
    for (size_t i = 0; i < got.size(); ++i) {
        num = std::max(num, std::abs(got[i] - want[i]));
        den = std::max(den, std::abs(want[i]));
    }
    return num / std::max(den, 1e-30);
}

}  // namespace

TEST_CASE("conv2d: ones kernel sums the footprint") {
    const ConvSpec spec{1, 1, 3, 1, 1};
    const auto y = conv2d(ones<float>({1, 1, 5, 5}), ones<float>({1, 1, 3, 3}), Tensor(), spec);
    CHECK(y.shape() == Shape{1, 1, 5, 5});
    CHECK(y.at(0, 0, 2, 2) == 9.0f);
    CHECK(y.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 0, 4, 4) == 4.0f);
    CHECK(y.at(0, 0, 0, 2) == 6.0f);
}

TEST_CASE("conv2d: 1x1 unit kernel is the identity") {
    const auto x = random_tensor({2, 1, 6, 7}, 1);
    const auto y = conv2d(x, ones<float>({1, 1, 1, 1}), Tensor::zeros({1, 1, 1, 1}), ConvSpec{1, 1, 1});
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d: stride-2 random case matches nested-loop oracle") {
    const ConvSpec spec{3, 4, 3, 2, 1};
    const auto x = random_tensor({2, 3, 8, 8}, 11);
    const auto w = random_tensor({4, 3, 3, 3}, 12);
    const auto b = random_tensor({1, 4, 1, 1}, 13);
    const auto y = conv2d(x, w, b, spec);
    REQUIRE(y.shape() == Shape{2, 4, 4, 4});
    Shape out;
    const auto want = mgbp::testing::conv_oracle(mgbp::testing::as_double(x), x.shape(),
                                                 mgbp::testing::as_double(w), mgbp::testing::as_double(b), spec, out);
    CHECK(out == y.shape());
    CHECK(relative_error(mgbp::testing::as_double(y), want) < 1e-5);
}

TEST_CASE("conv2d: ceil mode keeps the trailing partial window") {
    ConvSpec spec{1, 1, 4, 2, 1};
    spec.ceil_mode = true;
    for (int64_t h = 4; h <= 13; ++h) CHECK(spec.output_size(h) == (h + 1) / 2);
    const auto x = random_tensor({1, 1, 5, 7}, 3);
    const auto w = random_tensor({1, 1, 4, 4}, 4);
    const auto y = conv2d(x, w, Tensor(), spec);
    CHECK(y.shape() == Shape{1, 1, 3, 4});
    Shape out;
    const auto want = mgbp::testing::conv_oracle(mgbp::testing::as_double(x), x.shape(),
                                                 mgbp::testing::as_double(w), {}, spec, out);
    CHECK(relative_error(mgbp::testing::as_double(y), want) < 1e-5);
}

TEST_CASE("conv2d: shape errors name the dimension") {
    const ConvSpec spec{3, 4, 3, 1, 1};
    CHECK_THROWS_WITH_AS(conv2d(Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({4, 3, 3, 3}), Tensor(), spec),
                         doctest::Contains("input channels"), ShapeError);
    CHECK_THROWS_WITH_AS(conv2d(Tensor::zeros({1, 3, 5, 5}), Tensor::zeros({4, 3, 5, 5}), Tensor(), spec),
                         doctest::Contains("kernel height"), ShapeError);
    CHECK_THROWS_WITH_AS(conv2d(Tensor::zeros({1, 3, 5, 5}), Tensor::zeros({4, 3, 3, 3}), Tensor::zeros({1, 3, 1, 1}), spec),
                         doctest::Contains("bias"), ShapeError);
    ConvSpec bad = spec;
    bad.stride = 0;
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 5, 5}), Tensor::zeros({4, 3, 3, 3}), Tensor(), bad), ShapeError);
}

TEST_CASE("conv2d_transposed: shapes and single-tap spread") {
    ConvSpec spec{1, 1, 4, 2, 1, true};
    CHECK(conv2d_transposed(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 4, 4}), Tensor(), spec).shape() ==
          Shape{1, 1, 8, 8});

    const ConvSpec tap{1, 1, 2, 2, 0, true};
    const auto y = conv2d_transposed(Tensor({1, 1, 1, 1}, 0.75f), ones<float>({1, 1, 2, 2}), Tensor(), tap);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (float v : y.data()) CHECK(v == 0.75f);
}

TEST_CASE("conv2d_transposed: matches scatter oracle") {
    const ConvSpec spec{3, 2, 4, 2, 1, true};
    const auto x = random_tensor({2, 3, 5, 4}, 21);
    const auto w = random_tensor({3, 2, 4, 4}, 22);
    const auto b = random_tensor({1, 2, 1, 1}, 23);
    const auto y = conv2d_transposed(x, w, b, spec);
    Shape out;
    const auto want = mgbp::testing::conv_transposed_oracle(
        mgbp::testing::as_double(x), x.shape(), mgbp::testing::as_double(w), mgbp::testing::as_double(b), spec, out);
    REQUIRE(out == y.shape());
    CHECK(relative_error(mgbp::testing::as_double(y), want) < 1e-5);
}

TEST_CASE("adjoint identity <conv(x,k), y> = <x, conv^T(y,k)> over random geometries") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 24; ++trial) {
        const int64_t cin = 1 + rng() % 4, cout = 1 + rng() % 4, k = 1 + rng() % 5;
        const int64_t stride = 1 + rng() % 3, pad = rng() % ((k + 1) / 2);
        // Sizes for which the conventional and transposed maps are exact adjoints.
        const int64_t oh = 1 + rng() % 6, ow = 1 + rng() % 6;
        const int64_t h = (oh - 1) * stride - 2 * pad + k, w = (ow - 1) * stride - 2 * pad + k;
        ConvSpec fwd{cin, cout, k, stride, pad};
        ConvSpec adj{cout, cin, k, stride, pad, true};
        const auto x = random_tensor({2, cin, h, w}, 100 + trial);
        const auto kern = random_tensor({cout, cin, k, k}, 200 + trial);
        const auto y_fwd = conv2d(x, kern, Tensor(), fwd);
        REQUIRE(y_fwd.shape() == Shape{2, cout, oh, ow});
        const auto y = random_tensor(y_fwd.shape(), 300 + trial);
        // Transposed weights are (in, out, k, k) of the adjoint, i.e. the same buffer.
        const auto x_adj = conv2d_transposed(y, kern, Tensor(), adj);
        REQUIRE(x_adj.shape() == x.shape());
        const double lhs = inner_product(y_fwd, y);
        const double rhs = inner_product(x, x_adj);
        INFO("trial " << trial << " k=" << k << " s=" << stride << " p=" << pad);
        CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("elementwise and shape ops") {
    const Tensor x({1, 1, 1, 3}, {-1.f, 0.f, 2.f});
    const auto r = relu(x);
    CHECK(std::vector<float>(r.data().begin(), r.data().end()) == std::vector<float>{0, 0, 2});
    CHECK(max_abs_diff(relu(r), r) == 0.0);

    const auto a = random_tensor({1, 2, 4, 4}, 1);
    const auto b = random_tensor({1, 3, 4, 4}, 2);
    const auto cat = concat_channels<float>({a, b});
    CHECK(cat.shape() == Shape{1, 5, 4, 4});
    CHECK(max_abs_diff(slice_channels(cat, 0, 2), a) == 0.0);
    CHECK(max_abs_diff(slice_channels(cat, 2, 3), b) == 0.0);
    CHECK_THROWS_AS(concat_channels<float>({a, Tensor::zeros({1, 1, 5, 4})}), ShapeError);
    CHECK_THROWS_AS(add(a, b), ShapeError);

    const auto big = random_tensor({1, 1, 9, 9}, 3);
    const auto c = crop_to(big, 8, 8);
    CHECK(c.shape() == Shape{1, 1, 8, 8});
    CHECK(c.at(0, 0, 7, 7) == big.at(0, 0, 7, 7));
    CHECK(c.at(0, 0, 0, 0) == big.at(0, 0, 0, 0));
    CHECK_THROWS_AS(crop_to(big, 10, 9), ShapeError);
}

TEST_CASE("concat then split is bit-exact for random layouts") {
    std::mt19937 rng(5);
    for (int t = 0; t < 20; ++t) {
        const int64_t n = 1 + rng() % 3, h = 1 + rng() % 6, w = 1 + rng() % 6;
        std::vector<Tensor> parts;
        for (int p = 0; p < 1 + static_cast<int>(rng() % 4); ++p) parts.push_back(random_tensor({n, 1 + int64_t(rng() % 3), h, w}, rng()));
        const auto cat = concat_channels(parts);
        int64_t off = 0;
        for (const auto& p : parts) {
            CHECK(max_abs_diff(slice_channels(cat, off, p.shape().c), p) == 0.0);
            off += p.shape().c;
        }
    }
}

TEST_CASE("backward: relu sum, accumulation, error paths") {
    Tensor x({1, 1, 1, 2}, {-1.f, 2.f});
    x.set_requires_grad(true);
    auto f = sum(relu(x));
    f.backward();
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 1.0f);
    f.backward();
    CHECK(x.grad()[1] == 2.0f);
    x.zero_grad();
    CHECK(x.grad()[1] == 0.0f);

    CHECK_THROWS_AS(relu(x).backward(), GradError);
    CHECK_THROWS_AS(sum(Tensor::zeros({1, 1, 1, 2})).backward(), GradError);
    {
        NoGradGuard guard;
        CHECK_FALSE(sum(x).requires_grad());
    }
}

TEST_CASE("backward: gradient of sum(conv(x, k)) is conv^T(ones, k)") {
    const ConvSpec spec{2, 3, 3, 2, 1};
    auto x = random_tensor({1, 2, 7, 7}, 9);
    const auto k = random_tensor({3, 2, 3, 3}, 10);
    x.set_requires_grad(true);
    const auto y = conv2d(x, k, Tensor(), spec);
    sum(y).backward();
    ConvSpec adj{3, 2, 3, 2, 1, true};
    const auto expect = conv2d_transposed(Tensor(y.shape(), 1.0f), k, Tensor(), adj);
    const Tensor got(x.shape(), std::vector<float>(x.grad().begin(), x.grad().end()));
    CHECK(max_abs_diff(got, expect) < 1e-5);
}

TEST_CASE("gradient check: 3-layer conv+relu chain, every parameter, 64-bit") {
    const ConvSpec c1{2, 3, 3, 1, 1}, c2{3, 4, 4, 2, 1, true}, c3{4, 2, 3, 2, 1};
    auto x = random_tensor<double>({2, 2, 5, 5}, 31);
    std::vector<Tensor64> params{random_tensor<double>(c1.weight_shape(), 32), random_tensor<double>({1, 3, 1, 1}, 33),
                                 random_tensor<double>(c2.weight_shape(), 34), random_tensor<double>({1, 4, 1, 1}, 35),
                                 random_tensor<double>(c3.weight_shape(), 36), random_tensor<double>({1, 2, 1, 1}, 37)};
    x.set_requires_grad(true);
    for (auto& p : params) p.set_requires_grad(true);
    const auto target = random_tensor<double>({2, 2, 5, 5}, 38);
    auto forward = [&]() {
        auto h = relu(conv2d(x, params[0], params[1], c1));
        h = relu(conv2d_transposed(h, params[2], params[3], c2));
        h = conv2d(h, params[4], params[5], c3);
        return mean(square(sub(h, crop_to(target, h.shape().h, h.shape().w))));
    };
    forward().backward();
    auto value = [&]() {
        NoGradGuard g;
        return forward().item();
    };
    std::vector<Tensor64*> all{&x};
    for (auto& p : params) all.push_back(&p);
    for (Tensor64* p : all) {
        std::vector<double> analytic(p->grad().begin(), p->grad().end());
        std::vector<size_t> idx(analytic.size());
        std::iota(idx.begin(), idx.end(), 0);
        const auto r = mgbp::testing::check_gradient(*p, idx, value, 1e-3, 1e-4, 1e-10, analytic);
        CHECK_MESSAGE(r.failed == 0, "worst relative error " << r.worst_relative);
    }
}

TEST_CASE("gradient check: elementwise and reduction ops") {
    auto a = random_tensor<double>({2, 3, 2, 2}, 41);
    auto b = random_tensor<double>({2, 3, 2, 2}, 42);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto forward = [&]() {
        auto t = add(mul(a, b), scale(abs(sub(a, b)), 0.5));
        auto u = concat_channels<double>({t, slice_channels(a, 1, 2)});
        auto v = global_avg_pool(u);
        auto w = log_sigmoid(slice_batch(v, 1, 1));
        return weighted_sum<double>({sum(w), mean(square(u))}, {0.3, 2.0});
    };
    forward().backward();
    auto value = [&]() {
        NoGradGuard g;
        return forward().item();
    };
    for (Tensor64* p : {&a, &b}) {
        std::vector<double> analytic(p->grad().begin(), p->grad().end());
        std::vector<size_t> idx(analytic.size());
        std::iota(idx.begin(), idx.end(), 0);
        const auto r = mgbp::testing::check_gradient(*p, idx, value, 1e-5, 1e-4, 1e-10, analytic);
        CHECK_MESSAGE(r.failed == 0, "worst relative error " << r.worst_relative);
    }
}

TEST_CASE("log_sigmoid is finite at extreme arguments") {
    const Tensor x({1, 1, 1, 3}, {-200.f, 0.f, 200.f});
    const auto y = log_sigmoid(x);
    CHECK(all_finite(y));
    CHECK(y.data()[1] == doctest::Approx(-std::log(2.0)));
    CHECK(y.data()[2] == doctest::Approx(0.0));
}

TEST_CASE("memory accounting tracks live tensor bytes") {
    const auto before = memory_stats().live_bytes;
    {
        Tensor t = Tensor::zeros({1, 1, 100, 100});
        CHECK(memory_stats().live_bytes - before == 100 * 100 * 4);
    }
    CHECK(memory_stats().live_bytes == before);
}
