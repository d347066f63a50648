#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mgbp/generator.hpp"
#include "mgbp/tensor.hpp"

namespace mgbp {

inline constexpr int kVnscWindow = 7;
inline constexpr int64_t kVnscChannels = kVnscWindow * kVnscWindow;
inline constexpr double kVnscEpsilon = 1e-4;

/// Local variance normalization of the luminance followed by a shift correlator.
///
/// l = channel mean; m, var = mean and variance of l over the 7x7 edge-clamped
/// window; n = (l - m) / sqrt(var + eps^2).
/// Output channel (dy+3)*7 + (dx+3) holds n(p) * n(clamp(p + (dy, dx))).
template <typename T>
BasicTensor<T> vnsc(const BasicTensor<T>& img);

struct DiscriminatorConfig {
    /// CNN width of each pyramid level, finest first. The pyramid has one level per entry.
    std::vector<int64_t> widths = {32, 32, 48, 64};
    int64_t layers = 4;
    int64_t kernel = 3;
};

/// Convolution geometry of layer `layer` at pyramid level `level`.
ConvSpec discriminator_layer_spec(const DiscriminatorConfig& cfg, size_t level, int64_t layer);
ConvSpec discriminator_head_spec(const DiscriminatorConfig& cfg);

template <typename T>
struct DiscriminatorWeights {
    DiscriminatorConfig config;
    std::vector<std::vector<ConvParams<T>>> levels;  // [level][layer]
    ConvParams<T> head;                              // 1x1 projection to one score

    static DiscriminatorWeights init(const DiscriminatorConfig& cfg, uint64_t seed);
    static DiscriminatorWeights zeros(const DiscriminatorConfig& cfg);
    void validate() const;
    std::vector<BasicTensor<T>*> parameters();
    /// Names in storage order: "d<level>.<layer>.weight", "head.bias", ...
    std::vector<std::string> parameter_names() const;
    void set_requires_grad(bool on);
    DiscriminatorWeights clone() const;
    int64_t parameter_count() const;
};

/// Image pyramid {x, S2 x, S4 x, ...} with one entry per configured level.
template <typename T>
std::vector<BasicTensor<T>> discriminator_pyramid(const BasicTensor<T>& img, size_t levels);

/// Output features of one level's CNN given its input stack.
template <typename T>
BasicTensor<T> discriminator_level(const BasicTensor<T>& input, const DiscriminatorWeights<T>& w, size_t level);

/// Raw score C (before any sigmoid), shape (n, 1, 1, 1).
template <typename T>
BasicTensor<T> discriminate(const BasicTensor<T>& img, const DiscriminatorWeights<T>& w);

}  // namespace mgbp
