#include "mgbp/optim.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mgbp/weights_io.hpp"

namespace mgbp {

void QHAdamConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas must be in [0, 1)");
    if (!(nu1 >= 0 && nu1 <= 1) || !(nu2 >= 0 && nu2 <= 1)) throw std::invalid_argument("nu values must be in [0, 1]");
    if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
}

QHAdam::QHAdam(QHAdamConfig cfg) : cfg_(cfg) {
    cfg_.validate();
}

bool QHAdam::step(const std::vector<Tensor*>& params) {
    if (shapes_.empty()) {
        for (const Tensor* p : params) {
            shapes_.push_back(p->shape());
            m_.emplace_back(static_cast<size_t>(p->numel()), 0.0f);
            v_.emplace_back(static_cast<size_t>(p->numel()), 0.0f);
        }
    }
    if (params.size() != shapes_.size()) throw std::invalid_argument("optimizer parameter list changed size");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != shapes_[i]) {
            throw ShapeError("optimizer parameter " + std::to_string(i) + " changed shape to " + params[i]->shape().str());
        }
        if (params[i]->has_grad())
            for (float g : params[i]->grad())
                if (!std::isfinite(g)) return false;
    }

    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto x = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t k = 0; k < x.size(); ++k) {
            const double gk = g[k];
            const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
            const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double num = (1.0 - cfg_.nu1) * gk + cfg_.nu1 * mk / c1;
            const double den = std::sqrt((1.0 - cfg_.nu2) * gk * gk + cfg_.nu2 * vk / c2) + cfg_.eps;
            x[k] = static_cast<float>(x[k] - cfg_.lr * num / den);
        }
    }
    return true;
}

void QHAdam::save(const std::filesystem::path& path) const {
    std::ostringstream os;
    os.precision(17);
    os << "optimizer=qhadam\nlr=" << cfg_.lr << "\nbeta1=" << cfg_.beta1 << "\nbeta2=" << cfg_.beta2
       << "\nnu1=" << cfg_.nu1 << "\nnu2=" << cfg_.nu2 << "\neps=" << cfg_.eps << "\nsteps=" << steps_ << "\n";
    WeightFile f{os.str(), {}};
    for (size_t i = 0; i < shapes_.size(); ++i) {
        f.blocks.push_back({"m." + std::to_string(i), shapes_[i], m_[i]});
        f.blocks.push_back({"v." + std::to_string(i), shapes_[i], v_[i]});
    }
    write_weight_file(path, f);
}

QHAdam QHAdam::load(const std::filesystem::path& path) {
    auto f = read_weight_file(path);
    std::map<std::string, std::string> kv;
    std::istringstream in(f.descriptor);
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (kv["optimizer"] != "qhadam") throw WeightFileError(path.string() + ": not an optimizer state file");
    QHAdamConfig cfg;
    cfg.lr = std::stod(kv.at("lr"));
    cfg.beta1 = std::stod(kv.at("beta1"));
    cfg.beta2 = std::stod(kv.at("beta2"));
    cfg.nu1 = std::stod(kv.at("nu1"));
    cfg.nu2 = std::stod(kv.at("nu2"));
    cfg.eps = std::stod(kv.at("eps"));
    QHAdam opt(cfg);
    opt.steps_ = std::stoll(kv.at("steps"));
    if (f.blocks.size() % 2 != 0) throw WeightFileError(path.string() + ": unpaired moment blocks");
    for (size_t i = 0; i < f.blocks.size(); i += 2) {
        auto& m = f.blocks[i];
        auto& v = f.blocks[i + 1];
        if (m.name != "m." + std::to_string(i / 2) || v.name != "v." + std::to_string(i / 2) || m.shape != v.shape) {
            throw WeightFileError(path.string() + ": unexpected block " + m.name);
        }
        opt.shapes_.push_back(m.shape);
        opt.m_.push_back(std::move(m.data));
        opt.v_.push_back(std::move(v.data));
    }
    return opt;
}

}  // namespace mgbp
