#include "mgbp/tiled.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mgbp/ops.hpp"
#include "mgbp/resample.hpp"

namespace mgbp {

std::vector<int64_t> tile_positions(int64_t extent, int64_t patch, int64_t stride) {
    if (patch < 1 || patch > extent) {
        throw std::invalid_argument("patch " + std::to_string(patch) + " does not fit extent " + std::to_string(extent));
    }
    if (stride < 1 || stride > patch) {
        throw std::invalid_argument("stride " + std::to_string(stride) + " must be in [1, " + std::to_string(patch) + "]");
    }
    std::vector<int64_t> out;
    const int64_t last = extent - patch;
    for (int64_t p = 0; p < last; p += stride) out.push_back(p);
    out.push_back(last);
    return out;
}

PatchGrid plan_tiles(int64_t height, int64_t width, int64_t patch, int64_t stride) {
    PatchGrid g{height, width, patch, stride, {}};
    const auto rows = tile_positions(height, patch, stride);
    const auto cols = tile_positions(width, patch, stride);
    for (int64_t r : rows)
        for (int64_t c : cols) g.origins.emplace_back(r, c);
    return g;
}

std::vector<double> hamming_window(int64_t n) {
    if (n < 2) throw std::invalid_argument("hamming window needs at least 2 points");
    std::vector<double> w(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return w;
}

std::vector<double> hamming_window_2d(int64_t patch) {
    const auto w = hamming_window(patch);
    std::vector<double> out(static_cast<size_t>(patch * patch));
    for (int64_t r = 0; r < patch; ++r)
        for (int64_t c = 0; c < patch; ++c) out[r * patch + c] = w[r] * w[c];
    return out;
}

Tensor blend_patches(const Tensor& image, const Tensor& noise, const PatchGrid& grid, const PatchFn& fn,
                     const BlendOptions& opts) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("blend_patches expects one 3-channel image, got " + s.str());
    if (noise.shape() != Shape{1, 1, s.h, s.w}) throw ShapeError("noise " + noise.shape().str() + " does not match image");
    if (grid.height != s.h || grid.width != s.w) throw ShapeError("patch grid does not match image");
    std::vector<size_t> order = opts.order;
    if (order.empty()) {
        for (size_t i = 0; i < grid.origins.size(); ++i) order.push_back(i);
    } else {
        std::vector<bool> listed(grid.origins.size(), false);
        for (size_t k : order) {
            if (k >= listed.size() || listed[k]) throw std::invalid_argument("patch order must list every patch once");
            listed[k] = true;
        }
        if (order.size() != listed.size()) throw std::invalid_argument("patch order must list every patch once");
    }

    NoGradGuard no_grad;
    const int64_t P = grid.patch, H = s.h, W = s.w;
    const auto window = hamming_window_2d(P);
    Tensor64 acc = Tensor64::zeros({1, 3, H, W});
    Tensor64 wsum = Tensor64::zeros({1, 1, H, W});
    auto a = acc.mutable_data();
    auto ws = wsum.mutable_data();

    auto evaluate = [&](size_t k) {
        const auto [top, left] = grid.origins[k];
        Tensor out = fn(crop_region(image, top, left, P, P), crop_region(noise, top, left, P, P));
        if (out.shape() != Shape{1, 3, P, P}) throw ShapeError("patch output has shape " + out.shape().str());
        return out;
    };
    auto accumulate = [&](size_t k, const Tensor& out) {
        const auto [top, left] = grid.origins[k];
        const auto o = out.data();
        for (int64_t r = 0; r < P; ++r)
            for (int64_t c = 0; c < P; ++c) {
                const double w = window[r * P + c];
                const int64_t dst = (top + r) * W + left + c;
                ws[dst] += w;
                for (int64_t ch = 0; ch < 3; ++ch) a[ch * H * W + dst] += w * o[(ch * P + r) * P + c];
            }
    };

    const size_t wave = static_cast<size_t>(std::max(1, opts.threads));
    for (size_t begin = 0; begin < order.size(); begin += wave) {
        const size_t end = std::min(order.size(), begin + wave);
        if (end - begin == 1) {
            accumulate(order[begin], evaluate(order[begin]));
            continue;
        }
        std::vector<std::future<Tensor>> jobs;
        for (size_t i = begin; i < end; ++i) {
            jobs.push_back(std::async(std::launch::async, [&, k = order[i]] {
                NoGradGuard worker_no_grad;
                return evaluate(k);
            }));
        }
        // Merge in submission order so the sum does not depend on scheduling.
        for (size_t i = begin; i < end; ++i) accumulate(order[i], jobs[i - begin].get());
    }

    std::vector<float> y(static_cast<size_t>(3 * H * W));
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t p = 0; p < H * W; ++p) {
            if (!(ws[p] > 0.0)) throw std::logic_error("pixel not covered by any patch");
            y[ch * H * W + p] = static_cast<float>(a[ch * H * W + p] / ws[p]);
        }
    return Tensor(s, std::move(y));
}

namespace {

Tensor pre_upscale(const Tensor& lr, int scale) {
    if (scale == 1) return lr;
    NoGradGuard no_grad;
    return bicubic(lr, ScaleFactor::up(scale));
}

}  // namespace

Tensor upscale_image(const Tensor& lr, const TileConfig& cfg, const PatchFn& fn, std::vector<size_t> order) {
    const Shape s = lr.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("upscale_image expects one 3-channel image, got " + s.str());
    if (cfg.noise_amplitude < 0) throw std::invalid_argument("noise amplitude must be non-negative");
    const Tensor big = pre_upscale(lr, cfg.scale);
    const Shape b = big.shape();
    if (cfg.patch > b.h || cfg.patch > b.w) {
        throw ShapeError("image " + std::to_string(b.h) + "x" + std::to_string(b.w) + " is smaller than patch " +
                         std::to_string(cfg.patch));
    }
    const Tensor noise = sample_noise<float>(1, b.h, b.w, {cfg.noise_amplitude, cfg.seed});
    return blend_patches(big, noise, plan_tiles(b.h, b.w, cfg.patch, cfg.stride), fn, {cfg.threads, std::move(order)});
}

Tensor upscale_image(const Tensor& lr, const NetworkPlan& plan, const GeneratorWeights<float>& weights,
                     const TileConfig& cfg) {
    weights.validate(plan);
    if (cfg.patch < plan.min_input_size()) {
        throw ShapeError("patch " + std::to_string(cfg.patch) + " is below the network minimum " +
                         std::to_string(plan.min_input_size()));
    }
    const PatchFn fn = [&](const Tensor& rgb, const Tensor& noise) { return forward(rgb, noise, plan, weights); };
    return upscale_image(lr, cfg, fn);
}

Tensor ensemble_upscale(const Tensor& lr, const std::vector<System>& systems, const TileConfig& cfg) {
    if (systems.empty()) throw std::invalid_argument("ensemble needs at least one system");
    Tensor sum;
    for (const auto& sys : systems) {
        Tensor y = upscale_image(lr, sys.plan, sys.weights, cfg);
        if (sum.defined() && y.shape() != sum.shape()) throw ShapeError("ensemble members disagree on output shape");
        sum = sum.defined() ? add(sum, y) : y;
    }
    return systems.size() == 1 ? sum : scale(sum, 1.0f / static_cast<float>(systems.size()));
}

}  // namespace mgbp
