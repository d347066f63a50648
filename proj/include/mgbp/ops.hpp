#pragma once

#include <cstdint>
#include <vector>

#include "mgbp/tensor.hpp"

namespace mgbp {

/// Geometry of one (possibly transposed) square convolution.
///
/// Conventional: out = floor((in + 2*padding - kernel) / stride) + 1, or the
/// ceil of the quotient when ceil_mode is set (missing taps read as zero).
/// Transposed: out = (in - 1) * stride - 2 * padding + kernel.
struct ConvSpec {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t kernel = 1;
    int64_t stride = 1;
    int64_t padding = 0;
    bool transposed = false;
    bool ceil_mode = false;

    int64_t output_size(int64_t in) const;
    /// Weight tensor shape: (out, in, k, k) or (in, out, k, k) when transposed.
    Shape weight_shape() const;
    int64_t parameter_count() const;
    /// Multiply-accumulates for one image of the given input extent.
    int64_t macs(int64_t in_h, int64_t in_w) const;
    void validate() const;

    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

// Convolution is cross-correlation (no kernel flip). Bias has shape (1, out, 1, 1)
// and may be undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias, const ConvSpec& spec);

template <typename T>
BasicTensor<T> conv2d_transposed(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 const BasicTensor<T>& bias, const ConvSpec& spec);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

/// x * mask with a constant mask of the same shape (frozen activations).
template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& x, const BasicTensor<T>& mask);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x);
/// log(sigmoid(x)), evaluated stably.
template <typename T>
BasicTensor<T> log_sigmoid(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);
/// Weighted sum of scalars.
template <typename T>
BasicTensor<T> weighted_sum(const std::vector<BasicTensor<T>>& terms, const std::vector<T>& weights);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int64_t begin, int64_t count);
/// Keeps the top-left height x width block.
template <typename T>
BasicTensor<T> crop_to(const BasicTensor<T>& x, int64_t height, int64_t width);
/// Spatial window [top, top+height) x [left, left+width). Not differentiable.
template <typename T>
BasicTensor<T> crop_region(const BasicTensor<T>& x, int64_t top, int64_t left, int64_t height,
                           int64_t width);
/// Rows [begin, begin+count) of the batch axis.
template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, int64_t begin, int64_t count);
/// Mean over height and width: (n, c, h, w) -> (n, c, 1, 1).
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// Non-differentiable helpers.
template <typename T>
double inner_product(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
bool all_finite(const BasicTensor<T>& x);

}  // namespace mgbp
