#include "mgbp/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mgbp/ops.hpp"
#include "mgbp/resample.hpp"

namespace mgbp {

namespace {

constexpr int kHalf = kVnscWindow / 2;

inline int64_t clamp_index(int64_t i, int64_t n) {
    return std::clamp<int64_t>(i, 0, n - 1);
}

}  // namespace

template <typename T>
BasicTensor<T> vnsc(const BasicTensor<T>& img) {
    const Shape s = img.shape();
    if (s.c != 3) throw ShapeError("vnsc expects a 3-channel image, got " + s.str());
    const int64_t H = s.h, W = s.w, P = s.plane();
    const auto x = img.data();
    constexpr double inv_win = 1.0 / static_cast<double>(kVnscChannels);
    const double eps = kVnscEpsilon;

    // Per-image luminance, normalized signal and deviation kept for the backward pass.
    std::vector<double> lum(static_cast<size_t>(s.n * P));
    std::vector<double> nrm(lum.size()), sig(lum.size()), mu(lum.size());
    for (int64_t b = 0; b < s.n; ++b) {
        const T* src = x.data() + b * 3 * P;
        double* l = lum.data() + b * P;
        for (int64_t p = 0; p < P; ++p) {
            l[p] = (static_cast<double>(src[p]) + static_cast<double>(src[P + p]) + static_cast<double>(src[2 * P + p])) / 3.0;
        }
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                const double centre = l[r * W + c];
                // Offsets from the centre value keep constant windows exactly zero.
                double s1 = 0, s2 = 0;
                for (int dy = -kHalf; dy <= kHalf; ++dy) {
                    const int64_t rr = clamp_index(r + dy, H);
                    for (int dx = -kHalf; dx <= kHalf; ++dx) {
                        const double d = l[rr * W + clamp_index(c + dx, W)] - centre;
                        s1 += d;
                        s2 += d * d;
                    }
                }
                const double md = s1 * inv_win;
                const double var = s2 * inv_win - md * md;
                const double sd = std::sqrt(std::max(var, 0.0) + eps * eps);
                const size_t i = static_cast<size_t>(b * P + r * W + c);
                mu[i] = centre + md;
                sig[i] = sd;
                nrm[i] = -md / sd;
            }
    }

    const Shape out{s.n, kVnscChannels, H, W};
    std::vector<T> y(static_cast<size_t>(out.numel()));
    for (int64_t b = 0; b < s.n; ++b) {
        const double* n = nrm.data() + b * P;
        for (int dy = -kHalf; dy <= kHalf; ++dy)
            for (int dx = -kHalf; dx <= kHalf; ++dx) {
                const int64_t ch = (dy + kHalf) * kVnscWindow + (dx + kHalf);
                T* dst = y.data() + (b * kVnscChannels + ch) * P;
                for (int64_t r = 0; r < H; ++r) {
                    const int64_t rr = clamp_index(r + dy, H);
                    for (int64_t c = 0; c < W; ++c) {
                        dst[r * W + c] = static_cast<T>(n[r * W + c] * n[rr * W + clamp_index(c + dx, W)]);
                    }
                }
            }
    }

    auto xn = img.node();
    return detail::record<T>(
        out, std::move(y), {xn},
        [xp = xn.get(), s, lum = std::move(lum), nrm = std::move(nrm), sig = std::move(sig),
         mu = std::move(mu)](detail::Node<T>& self) {
            const int64_t H = s.h, W = s.w, P = s.plane();
            auto& gx = xp->grad_buffer();
            std::vector<double> gn(static_cast<size_t>(P)), gl(static_cast<size_t>(P));
            for (int64_t b = 0; b < s.n; ++b) {
                std::fill(gn.begin(), gn.end(), 0.0);
                std::fill(gl.begin(), gl.end(), 0.0);
                const double* n = nrm.data() + b * P;
                const double* l = lum.data() + b * P;
                const double* sd = sig.data() + b * P;
                const double* m = mu.data() + b * P;
                for (int dy = -kHalf; dy <= kHalf; ++dy)
                    for (int dx = -kHalf; dx <= kHalf; ++dx) {
                        const int64_t ch = (dy + kHalf) * kVnscWindow + (dx + kHalf);
                        const T* g = self.grad.data() + (b * kVnscChannels + ch) * P;
                        for (int64_t r = 0; r < H; ++r) {
                            const int64_t rr = clamp_index(r + dy, H);
                            for (int64_t c = 0; c < W; ++c) {
                                const int64_t p = r * W + c;
                                const int64_t q = rr * W + clamp_index(c + dx, W);
                                const double gv = static_cast<double>(g[p]);
                                gn[p] += gv * n[q];
                                gn[q] += gv * n[p];
                            }
                        }
                    }
                // n = (l - m) / s; dm/dl_q = 1/49; ds/dl_q = (l_q - m) / (49 s).
                const double inv_win = 1.0 / static_cast<double>(kVnscChannels);
                for (int64_t r = 0; r < H; ++r)
                    for (int64_t c = 0; c < W; ++c) {
                        const int64_t p = r * W + c;
                        const double a = gn[p] / sd[p];
                        gl[p] += a;
                        const double ks = -a * n[p] / sd[p];
                        for (int dy = -kHalf; dy <= kHalf; ++dy) {
                            const int64_t rr = clamp_index(r + dy, H);
                            for (int dx = -kHalf; dx <= kHalf; ++dx) {
                                const int64_t q = rr * W + clamp_index(c + dx, W);
                                gl[q] += (-a + ks * (l[q] - m[p])) * inv_win;
                            }
                        }
                    }
                T* dst = gx.data() + b * 3 * P;
                for (int64_t p = 0; p < P; ++p) {
                    const T v = static_cast<T>(gl[p] / 3.0);
                    dst[p] += v;
                    dst[P + p] += v;
                    dst[2 * P + p] += v;
                }
            }
        });
}

ConvSpec discriminator_layer_spec(const DiscriminatorConfig& cfg, size_t level, int64_t layer) {
    if (level >= cfg.widths.size() || layer < 0 || layer >= cfg.layers) {
        throw std::out_of_range("discriminator layer (" + std::to_string(level) + ", " + std::to_string(layer) +
                                ") out of range");
    }
    ConvSpec c;
    const int64_t width = cfg.widths[level];
    c.in_channels = layer > 0 ? width : kVnscChannels + (level > 0 ? cfg.widths[level - 1] : 0);
    c.out_channels = width;
    c.kernel = cfg.kernel;
    c.padding = (cfg.kernel - 1) / 2;
    c.stride = layer + 1 == cfg.layers ? 2 : 1;
    return c;
}

ConvSpec discriminator_head_spec(const DiscriminatorConfig& cfg) {
    ConvSpec c;
    c.in_channels = cfg.widths.back();
    c.out_channels = 1;
    return c;
}

template <typename T>
DiscriminatorWeights<T> DiscriminatorWeights<T>::init(const DiscriminatorConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto make = [&](const ConvSpec& c, double gain) {
        std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(c.in_channels * c.kernel * c.kernel)));
        std::vector<T> v(static_cast<size_t>(c.weight_shape().numel()));
        for (auto& x : v) x = static_cast<T>(dist(rng));
        return ConvParams<T>{BasicTensor<T>(c.weight_shape(), std::move(v)),
                             BasicTensor<T>::zeros({1, c.out_channels, 1, 1})};
    };
    DiscriminatorWeights w;
    w.config = cfg;
    w.levels.resize(cfg.widths.size());
    for (size_t l = 0; l < cfg.widths.size(); ++l)
        for (int64_t j = 0; j < cfg.layers; ++j) w.levels[l].push_back(make(discriminator_layer_spec(cfg, l, j), 2.0));
    w.head = make(discriminator_head_spec(cfg), 1.0);
    return w;
}

template <typename T>
DiscriminatorWeights<T> DiscriminatorWeights<T>::zeros(const DiscriminatorConfig& cfg) {
    auto make = [](const ConvSpec& c) {
        return ConvParams<T>{BasicTensor<T>::zeros(c.weight_shape()), BasicTensor<T>::zeros({1, c.out_channels, 1, 1})};
    };
    DiscriminatorWeights w;
    w.config = cfg;
    w.levels.resize(cfg.widths.size());
    for (size_t l = 0; l < cfg.widths.size(); ++l)
        for (int64_t j = 0; j < cfg.layers; ++j) w.levels[l].push_back(make(discriminator_layer_spec(cfg, l, j)));
    w.head = make(discriminator_head_spec(cfg));
    return w;
}

template <typename T>
void DiscriminatorWeights<T>::validate() const {
    if (config.widths.empty() || config.layers < 1) throw std::invalid_argument("empty discriminator config");
    if (levels.size() != config.widths.size()) throw std::invalid_argument("discriminator level count mismatch");
    auto check = [](const ConvParams<T>& p, const ConvSpec& c, const std::string& name) {
        if (p.weight.shape() != c.weight_shape()) {
            throw ShapeError(name + ": weight shape " + p.weight.shape().str() + ", expected " + c.weight_shape().str());
        }
        if (p.bias.numel() != c.out_channels) throw ShapeError(name + ": bias length mismatch");
        if (!all_finite(p.weight) || !all_finite(p.bias)) throw std::invalid_argument(name + ": non-finite parameter");
    };
    for (size_t l = 0; l < levels.size(); ++l) {
        if (static_cast<int64_t>(levels[l].size()) != config.layers) {
            throw std::invalid_argument("discriminator level " + std::to_string(l) + " layer count mismatch");
        }
        for (int64_t j = 0; j < config.layers; ++j) {
            check(levels[l][static_cast<size_t>(j)], discriminator_layer_spec(config, l, j),
                  "d" + std::to_string(l) + "." + std::to_string(j));
        }
    }
    check(head, discriminator_head_spec(config), "head");
}

template <typename T>
std::vector<BasicTensor<T>*> DiscriminatorWeights<T>::parameters() {
    std::vector<BasicTensor<T>*> out;
    for (auto& level : levels)
        for (auto& p : level) {
            out.push_back(&p.weight);
            out.push_back(&p.bias);
        }
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
}

template <typename T>
std::vector<std::string> DiscriminatorWeights<T>::parameter_names() const {
    std::vector<std::string> out;
    for (size_t l = 0; l < levels.size(); ++l)
        for (size_t j = 0; j < levels[l].size(); ++j) {
            const std::string stem = "d" + std::to_string(l) + "." + std::to_string(j);
            out.push_back(stem + ".weight");
            out.push_back(stem + ".bias");
        }
    out.push_back("head.weight");
    out.push_back("head.bias");
    return out;
}

template <typename T>
void DiscriminatorWeights<T>::set_requires_grad(bool on) {
    for (auto* p : parameters()) p->set_requires_grad(on);
}

template <typename T>
DiscriminatorWeights<T> DiscriminatorWeights<T>::clone() const {
    DiscriminatorWeights out;
    out.config = config;
    out.levels.resize(levels.size());
    for (size_t l = 0; l < levels.size(); ++l)
        for (const auto& p : levels[l]) out.levels[l].push_back({p.weight.clone(), p.bias.clone()});
    out.head = {head.weight.clone(), head.bias.clone()};
    return out;
}

template <typename T>
int64_t DiscriminatorWeights<T>::parameter_count() const {
    int64_t total = 0;
    for (const auto& level : levels)
        for (const auto& p : level) total += p.weight.numel() + p.bias.numel();
    return total + head.weight.numel() + head.bias.numel();
}

template <typename T>
std::vector<BasicTensor<T>> discriminator_pyramid(const BasicTensor<T>& img, size_t levels) {
    std::vector<BasicTensor<T>> out{img};
    for (size_t l = 1; l < levels; ++l) out.push_back(bicubic(img, ScaleFactor::down(1 << l)));
    return out;
}

template <typename T>
BasicTensor<T> discriminator_level(const BasicTensor<T>& input, const DiscriminatorWeights<T>& w, size_t level) {
    BasicTensor<T> h = input;
    for (int64_t j = 0; j < w.config.layers; ++j) {
        const auto& p = w.levels[level][static_cast<size_t>(j)];
        h = relu(conv2d(h, p.weight, p.bias, discriminator_layer_spec(w.config, level, j)));
    }
    return h;
}

template <typename T>
BasicTensor<T> discriminate(const BasicTensor<T>& img, const DiscriminatorWeights<T>& w) {
    w.validate();
    const Shape s = img.shape();
    if (s.c != 3) throw ShapeError("discriminator expects a 3-channel image, got " + s.str());
    const size_t levels = w.levels.size();
    const int64_t min_side = int64_t{4} << (levels - 1);
    if (s.h < min_side || s.w < min_side) {
        throw ShapeError("discriminator input " + s.str() + " is below the minimum side " + std::to_string(min_side));
    }
    const auto pyramid = discriminator_pyramid(img, levels);
    BasicTensor<T> features;
    for (size_t l = 0; l < levels; ++l) {
        auto in = vnsc(pyramid[l]);
        if (l > 0) in = concat_channels<T>({in, features});
        features = discriminator_level(in, w, l);
    }
    return conv2d(global_avg_pool(features), w.head.weight, w.head.bias, discriminator_head_spec(w.config));
}

#define MGBP_INSTANTIATE_DISCRIMINATOR(T)                                                                        \
    template BasicTensor<T> vnsc(const BasicTensor<T>&);                                                         \
    template struct DiscriminatorWeights<T>;                                                                     \
    template std::vector<BasicTensor<T>> discriminator_pyramid(const BasicTensor<T>&, size_t);                  \
    template BasicTensor<T> discriminator_level(const BasicTensor<T>&, const DiscriminatorWeights<T>&, size_t); \
    template BasicTensor<T> discriminate(const BasicTensor<T>&, const DiscriminatorWeights<T>&);

MGBP_INSTANTIATE_DISCRIMINATOR(float)
MGBP_INSTANTIATE_DISCRIMINATOR(double)

}  // namespace mgbp
