#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mgbp/discriminator.hpp"
#include "mgbp/tensor.hpp"

namespace mgbp {

/// Mean absolute difference.
template <typename T>
BasicTensor<T> l1(const BasicTensor<T>& x, const BasicTensor<T>& y);
/// Mean squared difference.
template <typename T>
BasicTensor<T> l2(const BasicTensor<T>& x, const BasicTensor<T>& y);

/// PSNR in dB of a mean squared error for unit-range images.
double psnr_from_mse(double mse);

/// Named scalar terms, their weights and total = sum(weight * term).
template <typename T>
struct LossReport {
    std::vector<std::string> names;
    std::vector<T> weights;
    std::vector<BasicTensor<T>> terms;
    BasicTensor<T> total;

    void add(std::string name, T weight, BasicTensor<T> term);
    /// Computes `total` from the terms added so far.
    void finish();
    double value(const std::string& name) const;
    double weight(const std::string& name) const;
};

/// One "step<TAB>name<TAB>value" line per term, then the total.
template <typename T>
std::string format_log(int64_t step, const LossReport<T>& report);

/// Scales of the multi-resolution L1 fidelity objective.
inline constexpr std::array<int, 5> kFidelityScales = {1, 2, 4, 8, 16};

/// Unit-weight L1 at full resolution and after bicubic S2, S4, S8, S16.
template <typename T>
LossReport<T> fidelity_loss(const BasicTensor<T>& y0, const BasicTensor<T>& x);

/// Full-resolution L2.
template <typename T>
BasicTensor<T> fidelity_validation(const BasicTensor<T>& y0, const BasicTensor<T>& x);

template <typename T>
struct RsganLosses {
    BasicTensor<T> discriminator;
    BasicTensor<T> generator;
};

/// Relativistic standard GAN losses over scores paired by batch position:
/// D = -mean log sigmoid(C(R) - C(F)), G = -mean log sigmoid(C(F) - C(R)).
template <typename T>
RsganLosses<T> rsgan_losses(const BasicTensor<T>& real_scores, const BasicTensor<T>& fake_scores);

template <typename T>
using FeatureFn = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

/// Fixed random three-layer convolutional feature map with total stride 4.
template <typename T>
class RandomFeatureExtractor {
  public:
    explicit RandomFeatureExtractor(uint64_t seed = 1234, int64_t width = 32);
    BasicTensor<T> operator()(const BasicTensor<T>& img) const;
    static std::array<ConvSpec, 3> specs(int64_t width);

  private:
    int64_t width_;
    std::array<ConvParams<T>, 3> layers_;
};

inline constexpr double kContextualBandwidth = 0.5;
inline constexpr double kContextualEpsilon = 1e-5;

/// Contextual loss between feature maps of the same shape. Generated features
/// `fy` are matched against target features `fx`; both are centred by the
/// target mean. Returns -log CX averaged over the batch. Differentiable in fy.
template <typename T>
BasicTensor<T> contextual_loss_features(const BasicTensor<T>& fy, const BasicTensor<T>& fx,
                                        double bandwidth = kContextualBandwidth,
                                        double epsilon = kContextualEpsilon);

template <typename T>
BasicTensor<T> contextual_loss(const BasicTensor<T>& y, const BasicTensor<T>& x, const FeatureFn<T>& extractor);

/// Weights of the five perceptual terms, in report order.
inline constexpr std::array<double, 5> kPerceptualWeights = {0.001, 10.0, 0.1, 10.0, 10.0};
inline constexpr std::array<const char*, 5> kPerceptualNames = {"rsgan_g", "l1_s16_w1", "cx_w1", "l1_w0",
                                                                 "l1_s16_w0"};

/// y1, y0: generator outputs at W = 1 and W = 0 for the same input; x: target.
template <typename T>
LossReport<T> perceptual_loss(const BasicTensor<T>& y1, const BasicTensor<T>& y0, const BasicTensor<T>& x,
                              const DiscriminatorWeights<T>& disc, const FeatureFn<T>& extractor);

/// No-reference quality metric, lower is better.
using ImageMetric = std::function<double(const Tensor&)>;

/// Sum of the metric over the image and its S2 and S4 downscales.
double perceptual_validation(const Tensor& y1, const ImageMetric& metric);

/// Default no-reference stand-in (this is not NIQE): negative mean local
/// contrast of the luminance over 3x3 windows. Sharper images score lower.
double contrast_proxy_metric(const Tensor& img);

/// Sum of absolute horizontal and vertical differences over all channels.
double total_variation(const Tensor& img);

}  // namespace mgbp
