#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mgbp/data.hpp"
#include "mgbp/discriminator.hpp"
#include "mgbp/generator.hpp"
#include "mgbp/losses.hpp"
#include "mgbp/optim.hpp"
#include "mgbp/plan.hpp"

namespace mgbp {

enum class Track { fidelity, perceptual };

const char* to_string(Track t);
Track parse_track(const std::string& s);

/// Raised when training cannot continue (empty data, divergence).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// All training hyperparameters. Text form is one key=value per line.
struct TrainConfig {
    Track track = Track::fidelity;
    std::filesystem::path data;        // prepared patch dataset
    std::filesystem::path validation;  // directory of HR PNGs; empty = first patch of each training image
    std::filesystem::path out;         // checkpoint directory
    std::filesystem::path init;        // optional generator weights to start from
    std::filesystem::path log;         // optional training log file

    int mu = 2;
    int levels = 4;
    std::vector<int64_t> schedule = {32, 24, 16, 8};
    int filter_size = 3;
    DiscriminatorConfig discriminator;

    int64_t batch = 4;
    int64_t patch = 64;
    int64_t steps = 1000;
    int64_t epoch_batches = 100;
    int64_t validation_patch = 0;  // 0 = training patch
    QHAdamConfig optimizer;
    int d_steps = 1;  // discriminator updates per generator update
    uint64_t seed = 1;
    uint64_t data_seed = 2;
    uint64_t noise_seed = 3;
    uint64_t feature_seed = 1234;
    double divergence_factor = 10.0;

    static TrainConfig parse(const std::string& text);
    static TrainConfig from_file(const std::filesystem::path& path);
    /// Applies one key=value setting; throws on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    std::string str() const;
    void validate() const;
    NetworkPlan plan() const;
};

/// Loss values of one optimizer step (generator step for the perceptual track).
struct StepRecord {
    int64_t step = 0;
    std::vector<std::pair<std::string, double>> terms;
    double total = 0.0;
    double d_loss = 0.0;  // perceptual track only
    uint64_t noise_seed = 0;
    bool skipped = false;  // non-finite gradient, no update applied

    double value(const std::string& name) const;
};

/// Writes "step<TAB>term<TAB>value" lines for a record.
void log_record(std::ostream& os, const StepRecord& r);

/// Throws TrainingError once `window` consecutive losses exceed factor x the first one.
class DivergenceMonitor {
  public:
    DivergenceMonitor(double factor, int64_t window);
    void observe(const StepRecord& r);

  private:
    double factor_;
    int64_t window_;
    std::optional<double> initial_;
    int64_t run_ = 0;
};

class FidelityTrainer {
  public:
    FidelityTrainer(NetworkPlan plan, GeneratorWeights<float> weights, QHAdamConfig opt);

    StepRecord step(const Batch& batch);

    const NetworkPlan& plan() const { return plan_; }
    GeneratorWeights<float>& weights() { return weights_; }
    QHAdam& optimizer() { return opt_; }
    int64_t steps() const { return steps_; }

  private:
    NetworkPlan plan_;
    GeneratorWeights<float> weights_;
    QHAdam opt_;
    int64_t steps_ = 0;
};

class PerceptualTrainer {
  public:
    PerceptualTrainer(NetworkPlan plan, GeneratorWeights<float> g, DiscriminatorWeights<float> d, QHAdamConfig opt,
                      uint64_t noise_seed, uint64_t feature_seed = 1234, int d_steps = 1);

    /// d_steps discriminator updates, then one generator update with two
    /// generator passes (W = 1 and W = 0) sharing this step's noise seed.
    StepRecord step(const Batch& batch);

    const NetworkPlan& plan() const { return plan_; }
    GeneratorWeights<float>& generator() { return g_; }
    DiscriminatorWeights<float>& discriminator() { return d_; }
    QHAdam& generator_optimizer() { return opt_g_; }
    QHAdam& discriminator_optimizer() { return opt_d_; }
    int64_t steps() const { return steps_; }
    /// Noise seed used by generator step `step` (zero-based).
    uint64_t noise_seed_for(int64_t step) const { return noise_seed_ + static_cast<uint64_t>(step); }

  private:
    NetworkPlan plan_;
    GeneratorWeights<float> g_;
    DiscriminatorWeights<float> d_;
    QHAdam opt_g_, opt_d_;
    uint64_t noise_seed_;
    RandomFeatureExtractor<float> extractor_;
    int d_steps_;
    int64_t steps_ = 0;
};

/// Files: generator.mgbp, discriminator.mgbp (perceptual), optimizer_g.mgbp,
/// optimizer_d.mgbp (perceptual), checkpoint.txt.
struct Checkpoint {
    Track track = Track::fidelity;
    NetworkPlan plan;
    GeneratorWeights<float> generator;
    std::optional<DiscriminatorWeights<float>> discriminator;
    std::optional<QHAdam> generator_optimizer;
    std::optional<QHAdam> discriminator_optimizer;
    int64_t epoch = 0;
    int64_t step = 0;
    double best_validation = 0.0;

    void save(const std::filesystem::path& dir) const;
    static Checkpoint load(const std::filesystem::path& dir);
};

/// Validation images: center patch of each HR PNG in `dir`.
std::vector<Tensor> load_validation_set(const std::filesystem::path& dir, int64_t patch);
/// Fallback validation set: center patch of the first stored patch of every training image.
std::vector<Tensor> validation_from_layout(const PatchLayout& layout, int64_t patch);

/// Mean full-resolution L2 of the W = 0 output over the set (lower is better).
double validate_fidelity(const NetworkPlan& plan, const GeneratorWeights<float>& w, const std::vector<Tensor>& hr);
/// Mean of the three-scale metric on the W = 1 output over the set.
double validate_perceptual(const NetworkPlan& plan, const GeneratorWeights<float>& w, const std::vector<Tensor>& hr,
                           const ImageMetric& metric, uint64_t noise_seed);

struct TrainResult {
    int64_t steps = 0;
    int64_t epochs = 0;
    double best_validation = 0.0;
    std::vector<double> validation;     // one per epoch
    std::vector<double> saved_best;     // best value at every checkpoint write
    std::vector<StepRecord> history;
};

/// Full loops: sample -> step -> per-epoch validation -> checkpoint on improvement.
/// Log lines go to `log` (and cfg.log if set).
TrainResult train_fidelity(const TrainConfig& cfg, std::ostream& log);
TrainResult train_perceptual(const TrainConfig& cfg, std::ostream& log, const ImageMetric& metric = contrast_proxy_metric);
TrainResult train(const TrainConfig& cfg, std::ostream& log);

}  // namespace mgbp
