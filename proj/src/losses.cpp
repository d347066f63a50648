#include "mgbp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mgbp/ops.hpp"
#include "mgbp/resample.hpp"

namespace mgbp {

namespace {

template <typename T>
void require_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
    }
}

template <typename T>
BasicTensor<T> downscale(const BasicTensor<T>& x, int f) {
    return f == 1 ? x : bicubic(x, ScaleFactor::down(f));
}

}  // namespace

template <typename T>
BasicTensor<T> l1(const BasicTensor<T>& x, const BasicTensor<T>& y) {
    require_same(x, y, "l1");
    return mean(abs(sub(x, y)));
}

template <typename T>
BasicTensor<T> l2(const BasicTensor<T>& x, const BasicTensor<T>& y) {
    require_same(x, y, "l2");
    return mean(square(sub(x, y)));
}

double psnr_from_mse(double mse) {
    return -10.0 * std::log10(mse);
}

template <typename T>
void LossReport<T>::add(std::string name, T w, BasicTensor<T> term) {
    if (term.numel() != 1) throw ShapeError("loss term " + name + " is not a scalar");
    names.push_back(std::move(name));
    weights.push_back(w);
    terms.push_back(std::move(term));
}

template <typename T>
void LossReport<T>::finish() {
    total = weighted_sum(terms, weights);
}

template <typename T>
double LossReport<T>::value(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<double>(terms[i].item());
    throw std::out_of_range("no loss term named " + name);
}

template <typename T>
double LossReport<T>::weight(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<double>(weights[i]);
    throw std::out_of_range("no loss term named " + name);
}

template <typename T>
std::string format_log(int64_t step, const LossReport<T>& report) {
    std::ostringstream out;
    out.precision(9);
    for (size_t i = 0; i < report.names.size(); ++i) {
        out << step << '\t' << report.names[i] << '\t' << static_cast<double>(report.terms[i].item()) << '\n';
    }
    if (report.total.defined()) out << step << "\ttotal\t" << static_cast<double>(report.total.item()) << '\n';
    return out.str();
}

template <typename T>
LossReport<T> fidelity_loss(const BasicTensor<T>& y0, const BasicTensor<T>& x) {
    require_same(y0, x, "fidelity_loss");
    LossReport<T> r;
    for (int f : kFidelityScales) r.add("l1_s" + std::to_string(f), T(1), l1(downscale(y0, f), downscale(x, f)));
    r.finish();
    return r;
}

template <typename T>
BasicTensor<T> fidelity_validation(const BasicTensor<T>& y0, const BasicTensor<T>& x) {
    return l2(y0, x);
}

template <typename T>
RsganLosses<T> rsgan_losses(const BasicTensor<T>& real_scores, const BasicTensor<T>& fake_scores) {
    if (real_scores.numel() == 0) throw std::invalid_argument("rsgan_losses: empty batch");
    require_same(real_scores, fake_scores, "rsgan_losses");
    return {scale(mean(log_sigmoid(sub(real_scores, fake_scores))), T(-1)),
            scale(mean(log_sigmoid(sub(fake_scores, real_scores))), T(-1))};
}

template <typename T>
std::array<ConvSpec, 3> RandomFeatureExtractor<T>::specs(int64_t width) {
    return {ConvSpec{3, width / 2, 3, 1, 1}, ConvSpec{width / 2, width, 4, 2, 1}, ConvSpec{width, width, 4, 2, 1}};
}

template <typename T>
RandomFeatureExtractor<T>::RandomFeatureExtractor(uint64_t seed, int64_t width) : width_(width) {
    if (width < 2) throw std::invalid_argument("feature width must be at least 2");
    std::mt19937_64 rng(seed);
    const auto s = specs(width);
    for (size_t i = 0; i < 3; ++i) {
        const ConvSpec& c = s[i];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(c.in_channels * c.kernel * c.kernel)));
        std::vector<T> v(static_cast<size_t>(c.weight_shape().numel()));
        for (auto& x : v) x = static_cast<T>(dist(rng));
        layers_[i] = {BasicTensor<T>(c.weight_shape(), std::move(v)), BasicTensor<T>::zeros({1, c.out_channels, 1, 1})};
    }
}

template <typename T>
BasicTensor<T> RandomFeatureExtractor<T>::operator()(const BasicTensor<T>& img) const {
    const auto s = specs(width_);
    auto h = relu(conv2d(img, layers_[0].weight, layers_[0].bias, s[0]));
    h = relu(conv2d(h, layers_[1].weight, layers_[1].bias, s[1]));
    return conv2d(h, layers_[2].weight, layers_[2].bias, s[2]);
}

template <typename T>
BasicTensor<T> contextual_loss_features(const BasicTensor<T>& fy, const BasicTensor<T>& fx, double bandwidth,
                                        double epsilon) {
    require_same(fy, fx, "contextual_loss");
    const Shape s = fy.shape();
    const int64_t N = s.plane(), C = s.c;
    if (N < 2) throw ShapeError("contextual_loss needs at least 2 feature positions, got " + std::to_string(N));

    // Per batch item: unit vectors for generated (i) and target (j) positions,
    // distances, row softmax and the column-wise argmax.
    struct Item {
        std::vector<double> yhat, xhat, ynorm, dist, cx;
        std::vector<int64_t> row_min, col_max;
        double sim = 0;
    };
    std::vector<Item> items(static_cast<size_t>(s.n));
    double total = 0;
    const auto ys = fy.data();
    const auto xs = fx.data();
    for (int64_t b = 0; b < s.n; ++b) {
        Item& it = items[static_cast<size_t>(b)];
        const T* yb = ys.data() + b * C * N;
        const T* xb = xs.data() + b * C * N;
        std::vector<double> centre(static_cast<size_t>(C), 0.0);
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0;
            for (int64_t p = 0; p < N; ++p) acc += xb[c * N + p];
            centre[c] = acc / static_cast<double>(N);
        }
        it.yhat.resize(static_cast<size_t>(N * C));
        it.xhat.resize(static_cast<size_t>(N * C));
        it.ynorm.resize(static_cast<size_t>(N));
        auto normalize = [&](const T* src, std::vector<double>& dst, double* norms) {
            for (int64_t p = 0; p < N; ++p) {
                double nn = 0;
                for (int64_t c = 0; c < C; ++c) {
                    const double v = static_cast<double>(src[c * N + p]) - centre[c];
                    dst[p * C + c] = v;
                    nn += v * v;
                }
                nn = std::max(std::sqrt(nn), 1e-12);
                for (int64_t c = 0; c < C; ++c) dst[p * C + c] /= nn;
                if (norms) norms[p] = nn;
            }
        };
        normalize(yb, it.yhat, it.ynorm.data());
        normalize(xb, it.xhat, nullptr);

        it.dist.resize(static_cast<size_t>(N * N));
        it.cx.resize(static_cast<size_t>(N * N));
        it.row_min.resize(static_cast<size_t>(N));
        for (int64_t i = 0; i < N; ++i) {
            double* d = it.dist.data() + i * N;
            const double* yi = it.yhat.data() + i * C;
            int64_t kmin = 0;
            for (int64_t j = 0; j < N; ++j) {
                const double* xj = it.xhat.data() + j * C;
                double dot = 0;
                for (int64_t c = 0; c < C; ++c) dot += yi[c] * xj[c];
                d[j] = 1.0 - dot;
                if (d[j] < d[kmin]) kmin = j;
            }
            it.row_min[i] = kmin;
            const double denom = d[kmin] + epsilon;
            double* row = it.cx.data() + i * N;
            double zmax = -INFINITY;
            for (int64_t j = 0; j < N; ++j) {
                row[j] = (1.0 - d[j] / denom) / bandwidth;
                zmax = std::max(zmax, row[j]);
            }
            double z = 0;
            for (int64_t j = 0; j < N; ++j) {
                row[j] = std::exp(row[j] - zmax);
                z += row[j];
            }
            for (int64_t j = 0; j < N; ++j) row[j] /= z;
        }
        it.col_max.resize(static_cast<size_t>(N));
        double sim = 0;
        for (int64_t j = 0; j < N; ++j) {
            int64_t best = 0;
            for (int64_t i = 1; i < N; ++i)
                if (it.cx[i * N + j] > it.cx[best * N + j]) best = i;
            it.col_max[j] = best;
            sim += it.cx[best * N + j];
        }
        it.sim = sim / static_cast<double>(N);
        total += -std::log(it.sim);
    }

    auto yn = fy.node();
    return detail::record<T>(
        Shape{}, {static_cast<T>(total / static_cast<double>(s.n))}, {yn},
        [yp = yn.get(), s, items = std::move(items), bandwidth, epsilon](detail::Node<T>& self) {
            const int64_t N = s.plane(), C = s.c;
            const double g0 = static_cast<double>(self.grad[0]) / static_cast<double>(s.n);
            auto& gy = yp->grad_buffer();
            std::vector<double> gcx(static_cast<size_t>(N * N)), gd(static_cast<size_t>(N * N));
            for (int64_t b = 0; b < s.n; ++b) {
                const Item& it = items[static_cast<size_t>(b)];
                std::fill(gcx.begin(), gcx.end(), 0.0);
                std::fill(gd.begin(), gd.end(), 0.0);
                // loss = -log(mean_j max_i cx_ij)
                const double gsim = -g0 / (it.sim * static_cast<double>(N));
                for (int64_t j = 0; j < N; ++j) gcx[it.col_max[j] * N + j] += gsim;
                for (int64_t i = 0; i < N; ++i) {
                    const double* row = it.cx.data() + i * N;
                    const double* grow = gcx.data() + i * N;
                    double dotp = 0;
                    for (int64_t j = 0; j < N; ++j) dotp += grow[j] * row[j];
                    const double* d = it.dist.data() + i * N;
                    const int64_t kmin = it.row_min[i];
                    const double denom = d[kmin] + epsilon;
                    double gmin = 0;
                    for (int64_t j = 0; j < N; ++j) {
                        const double gz = row[j] * (grow[j] - dotp);
                        const double gdt = -gz / bandwidth;  // through z = (1 - d/denom) / h
                        gd[i * N + j] += gdt / denom;
                        gmin -= gdt * d[j] / (denom * denom);
                    }
                    gd[i * N + kmin] += gmin;
                }
                T* dst = gy.data() + b * C * N;
                std::vector<double> gh(static_cast<size_t>(C));
                for (int64_t i = 0; i < N; ++i) {
                    std::fill(gh.begin(), gh.end(), 0.0);
                    for (int64_t j = 0; j < N; ++j) {
                        const double g = gd[i * N + j];
                        if (g == 0.0) continue;
                        const double* xj = it.xhat.data() + j * C;
                        for (int64_t c = 0; c < C; ++c) gh[c] -= g * xj[c];
                    }
                    const double* yi = it.yhat.data() + i * C;
                    double proj = 0;
                    for (int64_t c = 0; c < C; ++c) proj += gh[c] * yi[c];
                    const double inv = 1.0 / it.ynorm[i];
                    for (int64_t c = 0; c < C; ++c) dst[c * N + i] += static_cast<T>((gh[c] - proj * yi[c]) * inv);
                }
            }
        });
}

template <typename T>
BasicTensor<T> contextual_loss(const BasicTensor<T>& y, const BasicTensor<T>& x, const FeatureFn<T>& extractor) {
    require_same(y, x, "contextual_loss");
    BasicTensor<T> fx;
    {
        NoGradGuard no_grad;
        fx = extractor(x);
    }
    return contextual_loss_features(extractor(y), fx);
}

template <typename T>
LossReport<T> perceptual_loss(const BasicTensor<T>& y1, const BasicTensor<T>& y0, const BasicTensor<T>& x,
                              const DiscriminatorWeights<T>& disc, const FeatureFn<T>& extractor) {
    require_same(y1, x, "perceptual_loss");
    require_same(y0, x, "perceptual_loss");
    BasicTensor<T> real;
    {
        NoGradGuard no_grad;
        real = discriminate(x, disc);
    }
    const auto fake = discriminate(y1, disc);
    const auto x16 = downscale(x, 16);
    const std::array<BasicTensor<T>, 5> terms = {
        rsgan_losses(real, fake).generator,
        l1(downscale(y1, 16), x16),
        contextual_loss(y1, x, extractor),
        l1(y0, x),
        l1(downscale(y0, 16), x16),
    };
    LossReport<T> r;
    for (size_t i = 0; i < terms.size(); ++i) r.add(kPerceptualNames[i], static_cast<T>(kPerceptualWeights[i]), terms[i]);
    r.finish();
    return r;
}

double perceptual_validation(const Tensor& y1, const ImageMetric& metric) {
    double total = 0;
    for (int f : {1, 2, 4}) total += metric(downscale(y1, f));
    return total;
}

double contrast_proxy_metric(const Tensor& img) {
    const Shape s = img.shape();
    if (s.c != 3) throw ShapeError("contrast_proxy_metric expects a 3-channel image");
    const auto x = img.data();
    const int64_t H = s.h, W = s.w, P = s.plane();
    double acc = 0;
    for (int64_t b = 0; b < s.n; ++b) {
        std::vector<double> l(static_cast<size_t>(P));
        for (int64_t p = 0; p < P; ++p) {
            l[p] = (static_cast<double>(x[(b * 3) * P + p]) + x[(b * 3 + 1) * P + p] + x[(b * 3 + 2) * P + p]) / 3.0;
        }
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                double s1 = 0, s2 = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double v = l[std::clamp<int64_t>(r + dy, 0, H - 1) * W + std::clamp<int64_t>(c + dx, 0, W - 1)];
                        s1 += v;
                        s2 += v * v;
                    }
                const double m = s1 / 9.0;
                acc += std::sqrt(std::max(s2 / 9.0 - m * m, 0.0));
            }
    }
    return -acc / static_cast<double>(s.n * P);
}

double total_variation(const Tensor& img) {
    const Shape s = img.shape();
    const auto x = img.data();
    double tv = 0;
    for (int64_t pl = 0; pl < s.n * s.c; ++pl) {
        const float* p = x.data() + pl * s.plane();
        for (int64_t r = 0; r < s.h; ++r)
            for (int64_t c = 0; c < s.w; ++c) {
                if (c + 1 < s.w) tv += std::abs(static_cast<double>(p[r * s.w + c + 1]) - p[r * s.w + c]);
                if (r + 1 < s.h) tv += std::abs(static_cast<double>(p[(r + 1) * s.w + c]) - p[r * s.w + c]);
            }
    }
    return tv;
}

#define MGBP_INSTANTIATE_LOSSES(T)                                                                               \
    template BasicTensor<T> l1(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
    template BasicTensor<T> l2(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
    template struct LossReport<T>;                                                                               \
    template std::string format_log(int64_t, const LossReport<T>&);                                              \
    template LossReport<T> fidelity_loss(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template BasicTensor<T> fidelity_validation(const BasicTensor<T>&, const BasicTensor<T>&);                   \
    template RsganLosses<T> rsgan_losses(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template class RandomFeatureExtractor<T>;                                                                    \
    template BasicTensor<T> contextual_loss_features(const BasicTensor<T>&, const BasicTensor<T>&, double,       \
                                                     double);                                                    \
    template BasicTensor<T> contextual_loss(const BasicTensor<T>&, const BasicTensor<T>&, const FeatureFn<T>&); \
    template LossReport<T> perceptual_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                           const DiscriminatorWeights<T>&, const FeatureFn<T>&);

MGBP_INSTANTIATE_LOSSES(float)
MGBP_INSTANTIATE_LOSSES(double)

}  // namespace mgbp
