#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mgbp/generator.hpp"
#include "mgbp/plan.hpp"
#include "mgbp/tensor.hpp"

namespace mgbp {

struct PatchGrid {
    int64_t height = 0;
    int64_t width = 0;
    int64_t patch = 0;
    int64_t stride = 0;
    std::vector<std::pair<int64_t, int64_t>> origins;  // (row, col), row-major
};

/// Positions {i * stride} along one axis with the last one clamped to extent - patch.
std::vector<int64_t> tile_positions(int64_t extent, int64_t patch, int64_t stride);

PatchGrid plan_tiles(int64_t height, int64_t width, int64_t patch, int64_t stride);

/// 0.54 - 0.46 cos(2 pi n / (N - 1)), computed in double.
std::vector<double> hamming_window(int64_t n);
/// Row-major outer product of two 1-D Hamming windows.
std::vector<double> hamming_window_2d(int64_t patch);

struct TileConfig {
    int64_t patch = 64;
    int64_t stride = 32;
    double noise_amplitude = 0.0;
    uint64_t seed = 0;
    int scale = 16;   // bicubic pre-upscale factor; 1 feeds the input as is
    int threads = 1;  // patches evaluated concurrently per wave
};

/// Maps one (1, 3, p, p) image patch and its (1, 1, p, p) noise patch to a (1, 3, p, p) output.
using PatchFn = std::function<Tensor(const Tensor& rgb, const Tensor& noise)>;

struct BlendOptions {
    int threads = 1;
    /// Processing order as indices into grid.origins; empty means grid order.
    std::vector<size_t> order;
};

/// Window-weighted average of patch outputs, normalized per pixel.
Tensor blend_patches(const Tensor& image, const Tensor& noise, const PatchGrid& grid, const PatchFn& fn,
                     const BlendOptions& opts = {});

/// Pre-upscale, one full-resolution noise channel, then blended patch outputs.
Tensor upscale_image(const Tensor& lr, const TileConfig& cfg, const PatchFn& fn, std::vector<size_t> order = {});
Tensor upscale_image(const Tensor& lr, const NetworkPlan& plan, const GeneratorWeights<float>& weights,
                     const TileConfig& cfg);

struct System {
    NetworkPlan plan;
    GeneratorWeights<float> weights;
};

/// Mean of the per-system outputs.
Tensor ensemble_upscale(const Tensor& lr, const std::vector<System>& systems, const TileConfig& cfg);

}  // namespace mgbp
