#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgbp/tensor.hpp"

namespace mgbp {

/// Quasi-hyperbolic Adam hyperparameters. nu1 = nu2 = 1 gives Adam.
struct QHAdamConfig {
    double lr = 1e-4;
    double beta1 = 0.995;
    double beta2 = 0.999;
    double nu1 = 0.7;
    double nu2 = 1.0;
    double eps = 1e-8;

    void validate() const;
};

/// theta -= lr * ((1 - nu1) g + nu1 m_hat) / (sqrt((1 - nu2) g^2 + nu2 v_hat) + eps)
/// with bias-corrected moving averages m_hat and v_hat.
class QHAdam {
  public:
    explicit QHAdam(QHAdamConfig cfg = {});

    /// One update from the gradients held by `params` (missing gradients count
    /// as zero). Returns false and leaves everything untouched when a gradient
    /// is non-finite.
    bool step(const std::vector<Tensor*>& params);

    int64_t step_count() const { return steps_; }
    const QHAdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    void save(const std::filesystem::path& path) const;
    static QHAdam load(const std::filesystem::path& path);

  private:
    QHAdamConfig cfg_;
    int64_t steps_ = 0;
    std::vector<Shape> shapes_;
    std::vector<std::vector<float>> m_, v_;
};

}  // namespace mgbp
