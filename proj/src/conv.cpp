#include <Eigen/Core>
#include <algorithm>
#include <string>

#include "mgbp/ops.hpp"

namespace mgbp {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Patch geometry shared by both directions. "image" is the side the window
// slides over; "grid" is the side with one column per window position.
struct Geometry {
    int64_t channels;
    int64_t image_h, image_w;
    int64_t grid_h, grid_w;
    int64_t kernel, stride, padding;

    int64_t rows() const { return channels * kernel * kernel; }
    int64_t cols() const { return grid_h * grid_w; }
};

template <typename T>
void im2col(const T* image, const Geometry& g, T* cols) {
    const int64_t k = g.kernel;
    for (int64_t c = 0; c < g.channels; ++c) {
        const T* plane = image + c * g.image_h * g.image_w;
        for (int64_t ki = 0; ki < k; ++ki) {
            for (int64_t kj = 0; kj < k; ++kj) {
                T* row = cols + ((c * k + ki) * k + kj) * g.cols();
                for (int64_t oy = 0; oy < g.grid_h; ++oy) {
                    const int64_t iy = oy * g.stride - g.padding + ki;
                    T* dst = row + oy * g.grid_w;
                    if (iy < 0 || iy >= g.image_h) {
                        std::fill(dst, dst + g.grid_w, T(0));
                        continue;
                    }
                    const T* src = plane + iy * g.image_w;
                    for (int64_t ox = 0; ox < g.grid_w; ++ox) {
                        const int64_t ix = ox * g.stride - g.padding + kj;
                        dst[ox] = (ix >= 0 && ix < g.image_w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds columns back into the image.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* image) {
    const int64_t k = g.kernel;
    for (int64_t c = 0; c < g.channels; ++c) {
        T* plane = image + c * g.image_h * g.image_w;
        for (int64_t ki = 0; ki < k; ++ki) {
            for (int64_t kj = 0; kj < k; ++kj) {
                const T* row = cols + ((c * k + ki) * k + kj) * g.cols();
                for (int64_t oy = 0; oy < g.grid_h; ++oy) {
                    const int64_t iy = oy * g.stride - g.padding + ki;
                    if (iy < 0 || iy >= g.image_h) continue;
                    const T* src = row + oy * g.grid_w;
                    T* dst = plane + iy * g.image_w;
                    for (int64_t ox = 0; ox < g.grid_w; ++ox) {
                        const int64_t ix = ox * g.stride - g.padding + kj;
                        if (ix >= 0 && ix < g.image_w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

std::string dim_error(const char* what, int64_t got, int64_t expected) {
    return std::string(what) + ": got " + std::to_string(got) + ", expected " +
           std::to_string(expected);
}

template <typename T>
void check_operands(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                    const BasicTensor<T>& bias, const ConvSpec& spec) {
    spec.validate();
    const Shape& s = input.shape();
    if (s.c != spec.in_channels) throw ShapeError(dim_error("input channels", s.c, spec.in_channels));
    const Shape ws = spec.weight_shape();
    const Shape& got = weights.shape();
    if (got.n != ws.n) throw ShapeError(dim_error("weight dim 0", got.n, ws.n));
    if (got.c != ws.c) throw ShapeError(dim_error("weight dim 1", got.c, ws.c));
    if (got.h != ws.h) throw ShapeError(dim_error("weight kernel height", got.h, ws.h));
    if (got.w != ws.w) throw ShapeError(dim_error("weight kernel width", got.w, ws.w));
    if (bias.defined() && bias.numel() != spec.out_channels) {
        throw ShapeError(dim_error("bias length", bias.numel(), spec.out_channels));
    }
}

template <typename T>
void add_bias(const BasicTensor<T>& bias, int64_t batch, int64_t channels, int64_t plane, T* out) {
    if (!bias.defined()) return;
    const auto b = bias.data();
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t c = 0; c < channels; ++c) {
            T* p = out + (n * channels + c) * plane;
            std::for_each(p, p + plane, [v = b[c]](T& x) { x += v; });
        }
    }
}

template <typename T>
void bias_grad(detail::Node<T>* bias, const std::vector<T>& g, int64_t batch, int64_t channels,
               int64_t plane) {
    if (!bias->requires_grad) return;
    auto& gb = bias->grad_buffer();
    for (int64_t n = 0; n < batch; ++n) {
        for (int64_t c = 0; c < channels; ++c) {
            const T* p = g.data() + (n * channels + c) * plane;
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            gb[c] += acc;
        }
    }
}

}  // namespace

int64_t ConvSpec::output_size(int64_t in) const {
    if (transposed) return (in - 1) * stride - 2 * padding + kernel;
    const int64_t span = in + 2 * padding - kernel;
    if (span < 0) return 0;
    return (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
}

Shape ConvSpec::weight_shape() const {
    if (transposed) return {in_channels, out_channels, kernel, kernel};
    return {out_channels, in_channels, kernel, kernel};
}

int64_t ConvSpec::parameter_count() const {
    return in_channels * out_channels * kernel * kernel + out_channels;
}

int64_t ConvSpec::macs(int64_t in_h, int64_t in_w) const {
    const int64_t per_tap = in_channels * out_channels * kernel * kernel;
    if (transposed) return in_h * in_w * per_tap;
    return output_size(in_h) * output_size(in_w) * per_tap;
}

void ConvSpec::validate() const {
    if (kernel < 1) throw ShapeError("kernel must be >= 1, got " + std::to_string(kernel));
    if (stride < 1) throw ShapeError("stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("padding must be >= 0, got " + std::to_string(padding));
    if (in_channels < 1 || out_channels < 1) throw ShapeError("channel counts must be >= 1");
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias, const ConvSpec& spec) {
    if (spec.transposed) throw ShapeError("conv2d called with a transposed ConvSpec");
    check_operands(input, weights, bias, spec);
    const Shape in = input.shape();
    const int64_t oh = spec.output_size(in.h);
    const int64_t ow = spec.output_size(in.w);
    if (oh < 1 || ow < 1) {
        throw ShapeError("input " + in.str() + " is smaller than kernel " + std::to_string(spec.kernel));
    }
    const Shape out{in.n, spec.out_channels, oh, ow};
    const Geometry g{in.c, in.h, in.w, oh, ow, spec.kernel, spec.stride, spec.padding};

    std::vector<T> result(static_cast<size_t>(out.numel()));
    std::vector<T> cols(static_cast<size_t>(g.rows() * g.cols()));
    ConstMapMat<T> w(weights.data().data(), spec.out_channels, g.rows());
    for (int64_t n = 0; n < in.n; ++n) {
        im2col(input.data().data() + n * in.c * in.plane(), g, cols.data());
        MapMat<T> y(result.data() + n * out.c * out.plane(), out.c, g.cols());
        y.noalias() = w * ConstMapMat<T>(cols.data(), g.rows(), g.cols());
    }
    add_bias(bias, out.n, out.c, out.plane(), result.data());

    auto x_node = input.node();
    auto w_node = weights.node();
    auto b_node = bias.defined() ? bias.node() : nullptr;
    std::vector<detail::NodePtr<T>> parents{x_node, w_node};
    if (b_node) parents.push_back(b_node);
    return detail::record<T>(out, std::move(result), std::move(parents),
        [x = x_node.get(), wt = w_node.get(), b = b_node.get(), g, in, out](detail::Node<T>& self) {
            const std::vector<T>& gy = self.grad;
            std::vector<T> cols(static_cast<size_t>(g.rows() * g.cols()));
            ConstMapMat<T> w(wt->data.data(), out.c, g.rows());
            for (int64_t n = 0; n < in.n; ++n) {
                ConstMapMat<T> dy(gy.data() + n * out.c * out.plane(), out.c, g.cols());
                if (wt->requires_grad) {
                    im2col(x->data.data() + n * in.c * in.plane(), g, cols.data());
                    MapMat<T> dw(wt->grad_buffer().data(), out.c, g.rows());
                    dw.noalias() += dy * ConstMapMat<T>(cols.data(), g.rows(), g.cols()).transpose();
                }
                if (x->requires_grad) {
                    MapMat<T> dcols(cols.data(), g.rows(), g.cols());
                    dcols.noalias() = w.transpose() * dy;
                    col2im(cols.data(), g, x->grad_buffer().data() + n * in.c * in.plane());
                }
            }
            if (b) bias_grad(b, gy, out.n, out.c, out.plane());
        });
}

template <typename T>
BasicTensor<T> conv2d_transposed(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                 const BasicTensor<T>& bias, const ConvSpec& spec) {
    if (!spec.transposed) throw ShapeError("conv2d_transposed called with a conventional ConvSpec");
    check_operands(input, weights, bias, spec);
    const Shape in = input.shape();
    const int64_t oh = spec.output_size(in.h);
    const int64_t ow = spec.output_size(in.w);
    if (oh < 1 || ow < 1) throw ShapeError("transposed convolution output is empty for " + in.str());
    const Shape out{in.n, spec.out_channels, oh, ow};
    // The window slides over the output; one grid column per input pixel.
    const Geometry g{out.c, oh, ow, in.h, in.w, spec.kernel, spec.stride, spec.padding};

    std::vector<T> result(static_cast<size_t>(out.numel()), T(0));
    std::vector<T> cols(static_cast<size_t>(g.rows() * g.cols()));
    ConstMapMat<T> w(weights.data().data(), in.c, g.rows());
    for (int64_t n = 0; n < in.n; ++n) {
        MapMat<T> c(cols.data(), g.rows(), g.cols());
        c.noalias() = w.transpose() * ConstMapMat<T>(input.data().data() + n * in.c * in.plane(), in.c, g.cols());
        col2im(cols.data(), g, result.data() + n * out.c * out.plane());
    }
    add_bias(bias, out.n, out.c, out.plane(), result.data());

    auto x_node = input.node();
    auto w_node = weights.node();
    auto b_node = bias.defined() ? bias.node() : nullptr;
    std::vector<detail::NodePtr<T>> parents{x_node, w_node};
    if (b_node) parents.push_back(b_node);
    return detail::record<T>(out, std::move(result), std::move(parents),
        [x = x_node.get(), wt = w_node.get(), b = b_node.get(), g, in, out](detail::Node<T>& self) {
            const std::vector<T>& gy = self.grad;
            std::vector<T> cols(static_cast<size_t>(g.rows() * g.cols()));
            ConstMapMat<T> w(wt->data.data(), in.c, g.rows());
            for (int64_t n = 0; n < in.n; ++n) {
                im2col(gy.data() + n * out.c * out.plane(), g, cols.data());
                ConstMapMat<T> dcols(cols.data(), g.rows(), g.cols());
                if (x->requires_grad) {
                    MapMat<T> dx(x->grad_buffer().data() + n * in.c * in.plane(), in.c, g.cols());
                    dx.noalias() += w * dcols;
                }
                if (wt->requires_grad) {
                    MapMat<T> dw(wt->grad_buffer().data(), in.c, g.rows());
                    dw.noalias() += ConstMapMat<T>(x->data.data() + n * in.c * in.plane(), in.c, g.cols()) *
                                    dcols.transpose();
                }
            }
            if (b) bias_grad(b, gy, out.n, out.c, out.plane());
        });
}

template BasicTensor<float> conv2d(const BasicTensor<float>&, const BasicTensor<float>&,
                                   const BasicTensor<float>&, const ConvSpec&);
template BasicTensor<double> conv2d(const BasicTensor<double>&, const BasicTensor<double>&,
                                    const BasicTensor<double>&, const ConvSpec&);
template BasicTensor<float> conv2d_transposed(const BasicTensor<float>&, const BasicTensor<float>&,
                                              const BasicTensor<float>&, const ConvSpec&);
template BasicTensor<double> conv2d_transposed(const BasicTensor<double>&, const BasicTensor<double>&,
                                               const BasicTensor<double>&, const ConvSpec&);

}  // namespace mgbp
