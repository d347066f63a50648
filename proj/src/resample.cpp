#include "mgbp/resample.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mgbp {

namespace {

constexpr double kCubicA = -0.5;

// Sparse 1-D resampling matrix: row o reads indices[begin[o]..begin[o+1]).
struct Taps {
    int64_t in = 0;
    int64_t out = 0;
    std::vector<int64_t> begin;
    std::vector<int64_t> index;
    std::vector<double> weight;
};

Taps build_taps(int64_t in, ScaleFactor s) {
    Taps t;
    t.in = in;
    t.out = s.output_size(in);
    const double f = s.factor;
    const bool down = s.direction == ScaleDirection::down;
    const double support = down ? f : 1.0;
    t.begin.push_back(0);
    for (int64_t o = 0; o < t.out; ++o) {
        const double center = down ? (o + 0.5) * f - 0.5 : (o + 0.5) / f - 0.5;
        const auto lo = static_cast<int64_t>(std::floor(center - 2 * support));
        const auto hi = static_cast<int64_t>(std::ceil(center + 2 * support));
        const size_t first = t.index.size();
        double total = 0;
        for (int64_t i = lo; i <= hi; ++i) {
            const double w = cubic_kernel((i - center) / support);
            if (w == 0) continue;
            const int64_t clamped = std::clamp<int64_t>(i, 0, in - 1);
            // Merge repeated edge taps into one entry.
            bool merged = false;
            for (size_t k = first; k < t.index.size(); ++k) {
                if (t.index[k] == clamped) {
                    t.weight[k] += w;
                    merged = true;
                    break;
                }
            }
            if (!merged) {
                t.index.push_back(clamped);
                t.weight.push_back(w);
            }
            total += w;
        }
        for (size_t k = first; k < t.weight.size(); ++k) t.weight[k] /= total;
        t.begin.push_back(static_cast<int64_t>(t.index.size()));
    }
    return t;
}

// Resample along the last axis: src has rows of length taps.in.
template <typename T>
void along_width(const T* src, int64_t rows, const Taps& taps, T* dst) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* s = src + r * taps.in;
        T* d = dst + r * taps.out;
        for (int64_t o = 0; o < taps.out; ++o) {
            double acc = 0;
            for (int64_t k = taps.begin[o]; k < taps.begin[o + 1]; ++k) acc += taps.weight[k] * s[taps.index[k]];
            d[o] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void along_width_adjoint(const T* grad, int64_t rows, const Taps& taps, T* acc_into) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* g = grad + r * taps.out;
        T* d = acc_into + r * taps.in;
        for (int64_t o = 0; o < taps.out; ++o) {
            for (int64_t k = taps.begin[o]; k < taps.begin[o + 1]; ++k) d[taps.index[k]] += static_cast<T>(taps.weight[k] * g[o]);
        }
    }
}

// Resample along the height axis of planes (h = taps.in, width w).
template <typename T>
void along_height(const T* src, int64_t planes, int64_t w, const Taps& taps, T* dst) {
    std::vector<double> row(static_cast<size_t>(w));
    for (int64_t p = 0; p < planes; ++p) {
        const T* s = src + p * taps.in * w;
        T* d = dst + p * taps.out * w;
        for (int64_t o = 0; o < taps.out; ++o) {
            std::fill(row.begin(), row.end(), 0.0);
            for (int64_t k = taps.begin[o]; k < taps.begin[o + 1]; ++k) {
                const T* line = s + taps.index[k] * w;
                const double wt = taps.weight[k];
                for (int64_t x = 0; x < w; ++x) row[x] += wt * line[x];
            }
            for (int64_t x = 0; x < w; ++x) d[o * w + x] = static_cast<T>(row[x]);
        }
    }
}

template <typename T>
void along_height_adjoint(const T* grad, int64_t planes, int64_t w, const Taps& taps, T* acc_into) {
    for (int64_t p = 0; p < planes; ++p) {
        const T* g = grad + p * taps.out * w;
        T* d = acc_into + p * taps.in * w;
        for (int64_t o = 0; o < taps.out; ++o) {
            for (int64_t k = taps.begin[o]; k < taps.begin[o + 1]; ++k) {
                T* line = d + taps.index[k] * w;
                const double wt = taps.weight[k];
                for (int64_t x = 0; x < w; ++x) line[x] += static_cast<T>(wt * g[o * w + x]);
            }
        }
    }
}

}  // namespace

void ScaleFactor::validate() const {
    if (factor != 2 && factor != 4 && factor != 8 && factor != 16) {
        throw std::invalid_argument("scale factor must be one of 2, 4, 8, 16; got " + std::to_string(factor));
    }
}

int64_t ScaleFactor::output_size(int64_t in) const {
    return direction == ScaleDirection::down ? (in + factor - 1) / factor : in * factor;
}

double cubic_kernel(double x) {
    const double a = kCubicA;
    x = std::abs(x);
    if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
    if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
    return 0;
}

template <typename T>
BasicTensor<T> bicubic(const BasicTensor<T>& img, ScaleFactor s) {
    s.validate();
    const Shape in = img.shape();
    if (in.h < 4 || in.w < 4) throw ShapeError("bicubic needs at least a 4x4 image, got " + in.str());
    const Taps tw = build_taps(in.w, s);
    const Taps th = build_taps(in.h, s);
    const Shape out{in.n, in.c, th.out, tw.out};
    const int64_t planes = in.n * in.c;

    std::vector<T> mid(static_cast<size_t>(planes * in.h * tw.out));
    along_width(img.data().data(), planes * in.h, tw, mid.data());
    std::vector<T> result(static_cast<size_t>(out.numel()));
    along_height(mid.data(), planes, tw.out, th, result.data());

    auto xn = img.node();
    return detail::record<T>(out, std::move(result), {xn},
                             [xp = xn.get(), tw, th, planes, in](detail::Node<T>& self) {
                                 std::vector<T> gmid(static_cast<size_t>(planes * in.h * tw.out), T(0));
                                 along_height_adjoint(self.grad.data(), planes, tw.out, th, gmid.data());
                                 along_width_adjoint(gmid.data(), planes * in.h, tw, xp->grad_buffer().data());
                             });
}

template BasicTensor<float> bicubic(const BasicTensor<float>&, ScaleFactor);
template BasicTensor<double> bicubic(const BasicTensor<double>&, ScaleFactor);

}  // namespace mgbp
