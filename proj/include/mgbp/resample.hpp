#pragma once

#include <cstdint>

#include "mgbp/tensor.hpp"

namespace mgbp {

enum class ScaleDirection { up, down };

/// Power-of-two resampling factor, 2 to 16.
struct ScaleFactor {
    int factor = 2;
    ScaleDirection direction = ScaleDirection::down;

    static ScaleFactor down(int f) { return {f, ScaleDirection::down}; }
    static ScaleFactor up(int f) { return {f, ScaleDirection::up}; }

    void validate() const;
    /// ceil(in / factor) when downscaling, in * factor when upscaling.
    int64_t output_size(int64_t in) const;
};

/// Separable Catmull-Rom bicubic (a = -0.5) with edge-clamped taps. Downscaling
/// widens the kernel by the factor (antialiasing); taps are normalized to sum
/// to one so constants are preserved. Differentiable.
template <typename T>
BasicTensor<T> bicubic(const BasicTensor<T>& img, ScaleFactor s);

/// Catmull-Rom kernel value at distance x.
double cubic_kernel(double x);

}  // namespace mgbp
