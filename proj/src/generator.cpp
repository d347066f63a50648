#include "mgbp/generator.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mgbp/ops.hpp"

namespace mgbp {

namespace {

template <typename T>
class Runner {
  public:
    Runner(const NetworkPlan& plan, const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts)
        : plan_(plan), weights_(weights), opts_(opts) {}

    BasicTensor<T> run(const BasicTensor<T>& x) {
        const int levels = plan_.levels;
        analysis_.assign(static_cast<size_t>(levels) + 1, BasicTensor<T>());
        for (int k = 1; k <= levels; ++k) {
            analysis_[k] = activate(conv({ModuleKind::analysis, k, {}}, x));
        }
        std::vector<int> path;
        const auto y = back_project(levels, analysis_[levels], path);
        return conv({ModuleKind::synthesis, 0, {}}, y);
    }

  private:
    BasicTensor<T> back_project(int level, const BasicTensor<T>& u, std::vector<int>& path) {
        BasicTensor<T> out = u;
        if (level <= 1) return out;
        for (int step = 1; step <= plan_.mu; ++step) {
            path.push_back(step);
            const auto lr = activate(conv({ModuleKind::downscale, level, path}, out));
            const auto c = back_project(level - 1, lr, path);
            auto up = activate(conv({ModuleKind::upscale, level, path}, concat_channels<T>({analysis_[level - 1], c})));
            out = add(out, crop_to(up, out.shape().h, out.shape().w));
            path.pop_back();
        }
        return out;
    }

    BasicTensor<T> conv(const ModuleTag& tag, const BasicTensor<T>& in) {
        const auto idx = plan_.find(tag);
        if (!idx) throw std::invalid_argument("plan has no module " + tag.str());
        const ConvSpec& spec = plan_.instances[*idx].conv;
        const auto& p = weights_.at(tag);
        const BasicTensor<T> bias = opts_.use_bias ? p.bias : BasicTensor<T>();
        auto out = spec.transposed ? conv2d_transposed(in, p.weight, bias, spec) : conv2d(in, p.weight, bias, spec);
        if (opts_.observer) opts_.observer(tag, in.shape(), out.shape());
        return out;
    }

    BasicTensor<T> activate(const BasicTensor<T>& x) {
        if (opts_.frozen) {
            if (mask_index_ >= opts_.frozen->masks.size()) throw std::invalid_argument("frozen mask list too short");
            return apply_mask(x, opts_.frozen->masks[mask_index_++]);
        }
        if (opts_.record) {
            std::vector<T> m(x.data().size());
            const auto xs = x.data();
            for (size_t i = 0; i < m.size(); ++i) m[i] = xs[i] > T(0) ? T(1) : T(0);
            opts_.record->masks.emplace_back(x.shape(), std::move(m));
        }
        return relu(x);
    }

    const NetworkPlan& plan_;
    const GeneratorWeights<T>& weights_;
    const ForwardOptions<T>& opts_;
    std::vector<BasicTensor<T>> analysis_;
    size_t mask_index_ = 0;
};

}  // namespace

template <typename T>
GeneratorWeights<T> GeneratorWeights<T>::init(const NetworkPlan& plan, uint64_t seed) {
    GeneratorWeights w;
    std::mt19937_64 rng(seed);
    for (const auto& m : plan.instances) {
        const ConvSpec& c = m.conv;
        // Effective taps feeding one output pixel.
        double fan_in = static_cast<double>(c.in_channels * c.kernel * c.kernel);
        if (c.transposed) fan_in /= static_cast<double>(c.stride * c.stride);
        const double gain = m.tag.kind == ModuleKind::synthesis ? 1.0 : 2.0;
        std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
        std::vector<T> values(static_cast<size_t>(c.weight_shape().numel()));
        for (auto& v : values) v = static_cast<T>(dist(rng));
        w.add(m.tag, {BasicTensor<T>(c.weight_shape(), std::move(values)),
                      BasicTensor<T>::zeros({1, c.out_channels, 1, 1})});
    }
    return w;
}

template <typename T>
GeneratorWeights<T> GeneratorWeights<T>::zeros(const NetworkPlan& plan) {
    GeneratorWeights w;
    for (const auto& m : plan.instances) {
        w.add(m.tag, {BasicTensor<T>::zeros(m.conv.weight_shape()), BasicTensor<T>::zeros({1, m.conv.out_channels, 1, 1})});
    }
    return w;
}

template <typename T>
void GeneratorWeights<T>::add(const ModuleTag& tag, ConvParams<T> params) {
    if (index_.count(tag)) throw std::invalid_argument("duplicate weights for " + tag.str());
    index_[tag] = entries_.size();
    entries_.emplace_back(tag, std::move(params));
}

template <typename T>
const ConvParams<T>& GeneratorWeights<T>::at(const ModuleTag& tag) const {
    const auto it = index_.find(tag);
    if (it == index_.end()) throw std::invalid_argument("no weights for module " + tag.str());
    return entries_[it->second].second;
}

template <typename T>
ConvParams<T>& GeneratorWeights<T>::at(const ModuleTag& tag) {
    const auto it = index_.find(tag);
    if (it == index_.end()) throw std::invalid_argument("no weights for module " + tag.str());
    return entries_[it->second].second;
}

template <typename T>
void GeneratorWeights<T>::validate(const NetworkPlan& plan) const {
    if (entries_.size() != plan.instances.size()) {
        throw std::invalid_argument("weights hold " + std::to_string(entries_.size()) + " modules, plan has " +
                                    std::to_string(plan.instances.size()));
    }
    for (const auto& m : plan.instances) {
        const auto& p = at(m.tag);
        if (p.weight.shape() != m.conv.weight_shape()) {
            throw ShapeError(m.tag.str() + ": weight shape " + p.weight.shape().str() + ", plan expects " +
                             m.conv.weight_shape().str());
        }
        if (p.bias.numel() != m.conv.out_channels) throw ShapeError(m.tag.str() + ": bias length mismatch");
        if (!all_finite(p.weight) || !all_finite(p.bias)) {
            throw std::invalid_argument(m.tag.str() + ": non-finite parameter");
        }
    }
}

template <typename T>
std::vector<BasicTensor<T>*> GeneratorWeights<T>::parameters() {
    std::vector<BasicTensor<T>*> out;
    for (auto& [tag, p] : entries_) {
        out.push_back(&p.weight);
        out.push_back(&p.bias);
    }
    return out;
}

template <typename T>
void GeneratorWeights<T>::set_requires_grad(bool on) {
    for (auto* p : parameters()) p->set_requires_grad(on);
}

template <typename T>
GeneratorWeights<T> GeneratorWeights<T>::clone() const {
    GeneratorWeights out;
    for (const auto& [tag, p] : entries_) out.add(tag, {p.weight.clone(), p.bias.clone()});
    return out;
}

template <typename T>
BasicTensor<T> sample_noise(int64_t n, int64_t h, int64_t w, const NoiseConfig& cfg) {
    const Shape s{n, 1, h, w};
    if (cfg.amplitude == 0.0) return BasicTensor<T>::zeros(s);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(static_cast<size_t>(s.numel()));
    for (auto& x : v) x = static_cast<T>(cfg.amplitude * dist(rng));
    return BasicTensor<T>(s, std::move(v));
}

template <typename T>
BasicTensor<T> forward_features(const BasicTensor<T>& input, const NetworkPlan& plan,
                                const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts) {
    const Shape s = input.shape();
    if (s.c != plan.input_channels()) {
        throw ShapeError("generator input has " + std::to_string(s.c) + " channels, plan expects " +
                         std::to_string(plan.input_channels()));
    }
    if (s.h < plan.min_input_size() || s.w < plan.min_input_size()) {
        throw ShapeError("generator input " + s.str() + " is below the minimum side " +
                         std::to_string(plan.min_input_size()));
    }
    Runner<T> runner(plan, weights, opts);
    return runner.run(input);
}

template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& rgb, const BasicTensor<T>& noise, const NetworkPlan& plan,
                       const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts) {
    const Shape s = rgb.shape();
    if (s.c != 3) throw ShapeError("generator expects a 3-channel image, got " + s.str());
    const Shape ns = noise.shape();
    if (ns.n != s.n || ns.c != plan.noise_channels || ns.h != s.h || ns.w != s.w) {
        throw ShapeError("noise channel " + ns.str() + " does not match image " + s.str());
    }
    return forward_features(concat_channels<T>({rgb, noise}), plan, weights, opts);
}

template <typename T>
BasicTensor<T> forward(const BasicTensor<T>& rgb, const NoiseConfig& noise, const NetworkPlan& plan,
                       const GeneratorWeights<T>& weights, const ForwardOptions<T>& opts) {
    const Shape s = rgb.shape();
    return forward(rgb, sample_noise<T>(s.n, s.h, s.w, noise), plan, weights, opts);
}

template <typename T>
BasicTensor<T> frozen_linear_response(const BasicTensor<T>& probe, const ActivationMasks<T>& masks,
                                      const NetworkPlan& plan, const GeneratorWeights<T>& weights) {
    ForwardOptions<T> opts;
    opts.frozen = &masks;
    opts.use_bias = false;
    return forward_features(probe, plan, weights, opts);
}

template <typename T>
BasicTensor<T> dfv_impulse_response(const BasicTensor<T>& rgb, const NoiseConfig& noise, const NetworkPlan& plan,
                                    const GeneratorWeights<T>& weights, int64_t row, int64_t col, int64_t channel,
                                    T amplitude) {
    const Shape s = rgb.shape();
    if (s.n != 1) throw ShapeError("dfv expects a single image");
    if (row < 0 || row >= s.h || col < 0 || col >= s.w) {
        throw std::out_of_range("dfv pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                                ") outside image " + std::to_string(s.h) + "x" + std::to_string(s.w));
    }
    if (channel < 0 || channel >= plan.input_channels()) {
        throw std::out_of_range("dfv channel " + std::to_string(channel) + " out of range");
    }
    NoGradGuard no_grad;
    ActivationMasks<T> masks;
    ForwardOptions<T> opts;
    opts.record = &masks;
    forward(rgb, noise, plan, weights, opts);

    BasicTensor<T> probe = BasicTensor<T>::zeros({1, plan.input_channels(), s.h, s.w});
    probe.mutable_data()[static_cast<size_t>((channel * s.h + row) * s.w + col)] = amplitude;
    return frozen_linear_response(probe, masks, plan, weights);
}

#define MGBP_INSTANTIATE_GENERATOR(T)                                                                              \
    template class GeneratorWeights<T>;                                                                            \
    template BasicTensor<T> sample_noise<T>(int64_t, int64_t, int64_t, const NoiseConfig&);                        \
    template BasicTensor<T> forward_features(const BasicTensor<T>&, const NetworkPlan&, const GeneratorWeights<T>&, \
                                             const ForwardOptions<T>&);                                            \
    template BasicTensor<T> forward(const BasicTensor<T>&, const BasicTensor<T>&, const NetworkPlan&,              \
                                    const GeneratorWeights<T>&, const ForwardOptions<T>&);                        \
    template BasicTensor<T> forward(const BasicTensor<T>&, const NoiseConfig&, const NetworkPlan&,                 \
                                    const GeneratorWeights<T>&, const ForwardOptions<T>&);                        \
    template BasicTensor<T> frozen_linear_response(const BasicTensor<T>&, const ActivationMasks<T>&,               \
                                                   const NetworkPlan&, const GeneratorWeights<T>&);                \
    template BasicTensor<T> dfv_impulse_response(const BasicTensor<T>&, const NoiseConfig&, const NetworkPlan&,    \
                                                 const GeneratorWeights<T>&, int64_t, int64_t, int64_t, T);

MGBP_INSTANTIATE_GENERATOR(float)
MGBP_INSTANTIATE_GENERATOR(double)

}  // namespace mgbp
