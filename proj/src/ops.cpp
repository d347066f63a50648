#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mgbp/ops.hpp"

namespace mgbp {

namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    }
}

// Elementwise unary op with a derivative expressed through (x, y).
template <typename T, typename F, typename D>
BasicTensor<T> unary(const BasicTensor<T>& x, F f, D df) {
    const auto xs = x.data();
    std::vector<T> y(xs.size());
    std::transform(xs.begin(), xs.end(), y.begin(), f);
    auto xn = x.node();
    return detail::record<T>(x.shape(), std::move(y), {xn}, [xp = xn.get(), df](detail::Node<T>& self) {
        auto& gx = xp->grad_buffer();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xp->data[i], self.data[i]);
    });
}

}  // namespace

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return unary(x, [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& x, const BasicTensor<T>& mask) {
    require_same_shape(x, mask, "apply_mask");
    const auto xs = x.data();
    const auto ms = mask.data();
    std::vector<T> y(xs.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = xs[i] * ms[i];
    auto xn = x.node();
    auto mn = mask.node();
    return detail::record<T>(x.shape(), std::move(y), {xn}, [xp = xn.get(), mn](detail::Node<T>& self) {
        auto& gx = xp->grad_buffer();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mn->data[i];
    });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
    return unary(x, [](T v) { return std::abs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
    return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> log_sigmoid(const BasicTensor<T>& x) {
    // log(sigmoid(v)) = -softplus(-v); derivative sigmoid(-v).
    return unary(
        x, [](T v) { return v >= T(0) ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); },
        [](T v, T) {
            return v >= T(0) ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
        });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> y(a.data().begin(), a.data().end());
    const auto bs = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] += bs[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::record<T>(a.shape(), std::move(y), {an, bn},
                             [ap = an.get(), bp = bn.get()](detail::Node<T>& self) {
                                 for (auto* p : {ap, bp}) {
                                     if (!p->requires_grad) continue;
                                     auto& g = p->grad_buffer();
                                     for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                 }
                             });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> y(a.data().begin(), a.data().end());
    const auto bs = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] -= bs[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::record<T>(a.shape(), std::move(y), {an, bn},
                             [ap = an.get(), bp = bn.get()](detail::Node<T>& self) {
                                 if (ap->requires_grad) {
                                     auto& g = ap->grad_buffer();
                                     for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                 }
                                 if (bp->requires_grad) {
                                     auto& g = bp->grad_buffer();
                                     for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                                 }
                             });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> y(a.data().begin(), a.data().end());
    const auto bs = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] *= bs[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::record<T>(a.shape(), std::move(y), {an, bn},
                             [ap = an.get(), bp = bn.get()](detail::Node<T>& self) {
                                 if (ap->requires_grad) {
                                     auto& g = ap->grad_buffer();
                                     for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bp->data[i];
                                 }
                                 if (bp->requires_grad) {
                                     auto& g = bp->grad_buffer();
                                     for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ap->data[i];
                                 }
                             });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    const auto xs = x.data();
    // Accumulate in double so float reductions over large images stay accurate.
    const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
    auto xn = x.node();
    return detail::record<T>(Shape{}, {static_cast<T>(total)}, {xn}, [xp = xn.get()](detail::Node<T>& self) {
        auto& g = xp->grad_buffer();
        const T s = self.grad[0];
        for (auto& v : g) v += s;
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    const auto n = static_cast<double>(x.numel());
    if (n == 0) throw ShapeError("mean of an empty tensor");
    const auto xs = x.data();
    const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
    auto xn = x.node();
    return detail::record<T>(Shape{}, {static_cast<T>(total / n)}, {xn},
                             [xp = xn.get(), n](detail::Node<T>& self) {
                                 auto& g = xp->grad_buffer();
                                 const T s = static_cast<T>(self.grad[0] / n);
                                 for (auto& v : g) v += s;
                             });
}

template <typename T>
BasicTensor<T> weighted_sum(const std::vector<BasicTensor<T>>& terms, const std::vector<T>& weights) {
    if (terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
    double total = 0;
    std::vector<detail::NodePtr<T>> parents;
    for (size_t i = 0; i < terms.size(); ++i) {
        total += static_cast<double>(weights[i]) * static_cast<double>(terms[i].item());
        parents.push_back(terms[i].node());
    }
    std::vector<detail::Node<T>*> raw;
    for (auto& p : parents) raw.push_back(p.get());
    return detail::record<T>(Shape{}, {static_cast<T>(total)}, std::move(parents),
                             [raw, weights](detail::Node<T>& self) {
                                 for (size_t i = 0; i < raw.size(); ++i) {
                                     if (raw[i]->requires_grad) raw[i]->grad_buffer()[0] += weights[i] * self.grad[0];
                                 }
                             });
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no operands");
    Shape out = parts.front().shape();
    out.c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != out.n) throw ShapeError("concat_channels: batch mismatch " + s.str());
        if (s.h != out.h) throw ShapeError("concat_channels: height mismatch " + s.str());
        if (s.w != out.w) throw ShapeError("concat_channels: width mismatch " + s.str());
        out.c += s.c;
    }
    const int64_t plane = out.plane();
    std::vector<T> y(static_cast<size_t>(out.numel()));
    std::vector<detail::NodePtr<T>> parents;
    std::vector<std::pair<detail::Node<T>*, int64_t>> layout;  // node, channel offset
    int64_t offset = 0;
    for (const auto& p : parts) {
        const int64_t c = p.shape().c;
        const auto src = p.data();
        for (int64_t n = 0; n < out.n; ++n) {
            std::copy_n(src.begin() + n * c * plane, c * plane, y.begin() + (n * out.c + offset) * plane);
        }
        parents.push_back(p.node());
        layout.emplace_back(p.node().get(), offset);
        offset += c;
    }
    return detail::record<T>(out, std::move(y), std::move(parents), [layout, out](detail::Node<T>& self) {
        const int64_t plane = out.plane();
        for (const auto& [node, off] : layout) {
            if (!node->requires_grad) continue;
            auto& g = node->grad_buffer();
            const int64_t c = node->shape.c;
            for (int64_t n = 0; n < out.n; ++n) {
                const T* src = self.grad.data() + (n * out.c + off) * plane;
                T* dst = g.data() + n * c * plane;
                for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int64_t begin, int64_t count) {
    const Shape in = x.shape();
    if (begin < 0 || count < 1 || begin + count > in.c) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside channels of " + in.str());
    }
    const Shape out{in.n, count, in.h, in.w};
    const int64_t plane = in.plane();
    std::vector<T> y(static_cast<size_t>(out.numel()));
    const auto src = x.data();
    for (int64_t n = 0; n < in.n; ++n) {
        std::copy_n(src.begin() + (n * in.c + begin) * plane, count * plane, y.begin() + n * count * plane);
    }
    auto xn = x.node();
    return detail::record<T>(out, std::move(y), {xn}, [xp = xn.get(), in, begin, count](detail::Node<T>& self) {
        auto& g = xp->grad_buffer();
        const int64_t plane = in.plane();
        for (int64_t n = 0; n < in.n; ++n) {
            const T* s = self.grad.data() + n * count * plane;
            T* d = g.data() + (n * in.c + begin) * plane;
            for (int64_t i = 0; i < count * plane; ++i) d[i] += s[i];
        }
    });
}

template <typename T>
BasicTensor<T> crop_to(const BasicTensor<T>& x, int64_t height, int64_t width) {
    const Shape in = x.shape();
    if (height > in.h) throw ShapeError("crop_to: target height " + std::to_string(height) + " exceeds " + in.str());
    if (width > in.w) throw ShapeError("crop_to: target width " + std::to_string(width) + " exceeds " + in.str());
    if (height < 1 || width < 1) throw ShapeError("crop_to: empty target");
    if (height == in.h && width == in.w) return x;
    const Shape out{in.n, in.c, height, width};
    std::vector<T> y(static_cast<size_t>(out.numel()));
    const auto src = x.data();
    for (int64_t p = 0; p < in.n * in.c; ++p) {
        for (int64_t r = 0; r < height; ++r) {
            std::copy_n(src.begin() + (p * in.h + r) * in.w, width, y.begin() + (p * height + r) * width);
        }
    }
    auto xn = x.node();
    return detail::record<T>(out, std::move(y), {xn}, [xp = xn.get(), in, out](detail::Node<T>& self) {
        auto& g = xp->grad_buffer();
        for (int64_t p = 0; p < in.n * in.c; ++p) {
            for (int64_t r = 0; r < out.h; ++r) {
                const T* s = self.grad.data() + (p * out.h + r) * out.w;
                T* d = g.data() + (p * in.h + r) * in.w;
                for (int64_t c = 0; c < out.w; ++c) d[c] += s[c];
            }
        }
    });
}

template <typename T>
BasicTensor<T> crop_region(const BasicTensor<T>& x, int64_t top, int64_t left, int64_t height,
                           int64_t width) {
    const Shape in = x.shape();
    if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > in.h || left + width > in.w) {
        throw ShapeError("crop_region: window outside " + in.str());
    }
    const Shape out{in.n, in.c, height, width};
    std::vector<T> y(static_cast<size_t>(out.numel()));
    const auto src = x.data();
    for (int64_t p = 0; p < in.n * in.c; ++p) {
        for (int64_t r = 0; r < height; ++r) {
            std::copy_n(src.begin() + (p * in.h + top + r) * in.w + left, width,
                        y.begin() + (p * height + r) * width);
        }
    }
    return BasicTensor<T>(out, std::move(y));
}

template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, int64_t begin, int64_t count) {
    const Shape in = x.shape();
    if (begin < 0 || count < 1 || begin + count > in.n) throw ShapeError("slice_batch: range outside " + in.str());
    const int64_t item = in.c * in.plane();
    const Shape out{count, in.c, in.h, in.w};
    std::vector<T> y(x.data().begin() + begin * item, x.data().begin() + (begin + count) * item);
    auto xn = x.node();
    return detail::record<T>(out, std::move(y), {xn}, [xp = xn.get(), begin, item](detail::Node<T>& self) {
        auto& g = xp->grad_buffer();
        for (size_t i = 0; i < self.grad.size(); ++i) g[begin * item + i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
    const Shape in = x.shape();
    const int64_t plane = in.plane();
    const Shape out{in.n, in.c, 1, 1};
    std::vector<T> y(static_cast<size_t>(out.numel()));
    const auto src = x.data();
    for (int64_t p = 0; p < in.n * in.c; ++p) {
        double acc = 0;
        for (int64_t i = 0; i < plane; ++i) acc += src[p * plane + i];
        y[p] = static_cast<T>(acc / plane);
    }
    auto xn = x.node();
    return detail::record<T>(out, std::move(y), {xn}, [xp = xn.get(), in](detail::Node<T>& self) {
        auto& g = xp->grad_buffer();
        const int64_t plane = in.plane();
        for (int64_t p = 0; p < in.n * in.c; ++p) {
            const T s = self.grad[p] / static_cast<T>(plane);
            for (int64_t i = 0; i < plane; ++i) g[p * plane + i] += s;
        }
    });
}

template <typename T>
double inner_product(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "inner_product");
    double acc = 0;
    const auto as = a.data();
    const auto bs = b.data();
    for (size_t i = 0; i < as.size(); ++i) acc += static_cast<double>(as[i]) * static_cast<double>(bs[i]);
    return acc;
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    const auto as = a.data();
    const auto bs = b.data();
    for (size_t i = 0; i < as.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(as[i]) - static_cast<double>(bs[i])));
    }
    return m;
}

template <typename T>
bool all_finite(const BasicTensor<T>& x) {
    const auto xs = x.data();
    return std::all_of(xs.begin(), xs.end(), [](T v) { return std::isfinite(v); });
}

#define MGBP_INSTANTIATE_OPS(T)                                                                      \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                             \
    template BasicTensor<T> apply_mask(const BasicTensor<T>&, const BasicTensor<T>&);                \
    template BasicTensor<T> abs(const BasicTensor<T>&);                                              \
    template BasicTensor<T> square(const BasicTensor<T>&);                                           \
    template BasicTensor<T> log_sigmoid(const BasicTensor<T>&);                                      \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                         \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                              \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                             \
    template BasicTensor<T> weighted_sum(const std::vector<BasicTensor<T>>&, const std::vector<T>&); \
    template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                     \
    template BasicTensor<T> slice_channels(const BasicTensor<T>&, int64_t, int64_t);                 \
    template BasicTensor<T> crop_to(const BasicTensor<T>&, int64_t, int64_t);                        \
    template BasicTensor<T> crop_region(const BasicTensor<T>&, int64_t, int64_t, int64_t, int64_t);  \
    template BasicTensor<T> slice_batch(const BasicTensor<T>&, int64_t, int64_t);                    \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                  \
    template double inner_product(const BasicTensor<T>&, const BasicTensor<T>&);                     \
    template double max_abs_diff(const BasicTensor<T>&, const BasicTensor<T>&);                      \
    template bool all_finite(const BasicTensor<T>&);

MGBP_INSTANTIATE_OPS(float)
MGBP_INSTANTIATE_OPS(double)

}  // namespace mgbp
