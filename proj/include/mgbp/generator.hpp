#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "mgbp/plan.hpp"
#include "mgbp/tensor.hpp"

namespace mgbp {

template <typename T>
struct ConvParams {
    BasicTensor<T> weight;
    BasicTensor<T> bias;  // (1, out, 1, 1)
};

/// Parameters for every tagged module of a plan, stored in plan order.
template <typename T>
class GeneratorWeights {
  public:
    GeneratorWeights() = default;

    /// Fan-in scaled normal initialization (He for ReLU layers), zero biases.
    static GeneratorWeights init(const NetworkPlan& plan, uint64_t seed);
    static GeneratorWeights zeros(const NetworkPlan& plan);

    const ConvParams<T>& at(const ModuleTag& tag) const;
    ConvParams<T>& at(const ModuleTag& tag);
    size_t size() const { return entries_.size(); }
    const std::vector<std::pair<ModuleTag, ConvParams<T>>>& entries() const { return entries_; }
    std::vector<std::pair<ModuleTag, ConvParams<T>>>& entries() { return entries_; }
    void add(const ModuleTag& tag, ConvParams<T> params);

    /// Throws unless every plan tag has one entry with matching shapes and finite values.
    void validate(const NetworkPlan& plan) const;

    std::vector<BasicTensor<T>*> parameters();
    void set_requires_grad(bool on);
    GeneratorWeights clone() const;

    template <typename U>
    GeneratorWeights<U> cast() const {
        GeneratorWeights<U> out;
        for (const auto& [tag, p] : entries_) {
            out.add(tag, {tensor_cast<U>(p.weight), tensor_cast<U>(p.bias)});
        }
        return out;
    }

  private:
    std::vector<std::pair<ModuleTag, ConvParams<T>>> entries_;
    std::map<ModuleTag, size_t> index_;
};

/// Amplitude W of the single Gaussian noise channel and its seed.
struct NoiseConfig {
    double amplitude = 0.0;
    uint64_t seed = 0;
};

/// Standard normal field of shape (n, 1, h, w) from `seed`, scaled by the
/// amplitude. Amplitude 0 yields exact zeros.
template <typename T>
BasicTensor<T> sample_noise(int64_t n, int64_t h, int64_t w, const NoiseConfig& cfg);

/// ReLU masks captured during a reference pass, in call order.
template <typename T>
struct ActivationMasks {
    std::vector<BasicTensor<T>> masks;
};

template <typename T>
struct ForwardOptions {
    ActivationMasks<T>* record = nullptr;        // capture every ReLU mask
    const ActivationMasks<T>* frozen = nullptr;  // replace ReLUs by these masks
    bool use_bias = true;
    // Called after each convolution with the module tag and conv input/output shapes.
    std::function<void(const ModuleTag&, const Shape&, const Shape&)> observer;
};

/// Runs the network on an already concatenated [image, noise] input.
template <typename T>
BasicTensor<T> forward_features(const BasicTensor<T>& input, const NetworkPlan& plan,
                                const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts = {});

/// Output = Synthesis(BP_L(...)) for a pre-upscaled RGB input and a noise channel
/// of matching spatial size (already scaled by W).
template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& rgb, const BasicTensor<T>& noise, const NetworkPlan& plan,
                       const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts = {});

template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& rgb, const NoiseConfig& noise, const NetworkPlan& plan,
                       const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts = {});

/// Impulse response of the network with every ReLU frozen to its state on the
/// reference input: the equivalent linear filter for one input pixel/channel.
/// Returns a (1, 3, H, W) image.
template <typename T>
BasicTensor<T> dfv_impulse_response(const BasicTensor<T>& rgb, const NoiseConfig& noise, const NetworkPlan& plan,
                                    const GeneratorWeights<T>& weights, int64_t row, int64_t col, int64_t channel,
                                    T amplitude = T(1));

/// Frozen-activation linear map applied to an arbitrary probe input.
template <typename T>
BasicTensor<T> frozen_linear_response(const BasicTensor<T>& probe, const ActivationMasks<T>& masks,
                                      const NetworkPlan& plan, const GeneratorWeights<T>& weights);

}  // namespace mgbp
