#include "mgbp/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "mgbp/image_io.hpp"
#include "mgbp/ops.hpp"
#include "mgbp/weights_io.hpp"

namespace fs = std::filesystem;

namespace mgbp {

const char* to_string(Track t) {
    return t == Track::fidelity ? "fidelity" : "perceptual";
}

Track parse_track(const std::string& s) {
    if (s == "fidelity") return Track::fidelity;
    if (s == "perceptual") return Track::perceptual;
    throw std::invalid_argument("unknown track '" + s + "' (expected fidelity or perceptual)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<int64_t> parse_list(const std::string& key, const std::string& value) {
    std::vector<int64_t> out;
    std::istringstream in(value);
    for (std::string item; std::getline(in, item, ',');) {
        size_t used = 0;
        const auto t = trim(item);
        const int64_t v = std::stoll(t, &used);
        if (used != t.size()) throw std::invalid_argument(key + ": bad list entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
}

template <typename I>
I parse_int(const std::string& key, const std::string& value) {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(key + ": not an integer '" + value + "'");
    return static_cast<I>(v);
}

double parse_double(const std::string& key, const std::string& value) {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(key + ": not a number '" + value + "'");
    return v;
}

std::string join(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

template <typename W>
void zero_grads(W& params) {
    for (auto* p : params) p->zero_grad();
}

std::vector<std::pair<std::string, double>> report_terms(const LossReport<float>& r) {
    std::vector<std::pair<std::string, double>> out;
    for (size_t i = 0; i < r.names.size(); ++i) out.emplace_back(r.names[i], r.terms[i].item());
    return out;
}

Tensor center_patch(const Tensor& img, int64_t patch) {
    const Shape s = img.shape();
    if (s.h < patch || s.w < patch) {
        throw std::invalid_argument("validation image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                    " is smaller than patch " + std::to_string(patch));
    }
    return crop_region(img, (s.h - patch) / 2, (s.w - patch) / 2, patch, patch);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "track") track = parse_track(value);
    else if (key == "data") data = value;
    else if (key == "validation") validation = value;
    else if (key == "out") out = value;
    else if (key == "init") init = value;
    else if (key == "log") log = value;
    else if (key == "mu") mu = parse_int<int>(key, value);
    else if (key == "levels") levels = parse_int<int>(key, value);
    else if (key == "schedule") schedule = parse_list(key, value);
    else if (key == "filter_size") filter_size = parse_int<int>(key, value);
    else if (key == "disc_widths") discriminator.widths = parse_list(key, value);
    else if (key == "disc_layers") discriminator.layers = parse_int<int64_t>(key, value);
    else if (key == "batch") batch = parse_int<int64_t>(key, value);
    else if (key == "patch") patch = parse_int<int64_t>(key, value);
    else if (key == "steps") steps = parse_int<int64_t>(key, value);
    else if (key == "epoch_batches") epoch_batches = parse_int<int64_t>(key, value);
    else if (key == "validation_patch") validation_patch = parse_int<int64_t>(key, value);
    else if (key == "lr") optimizer.lr = parse_double(key, value);
    else if (key == "beta1") optimizer.beta1 = parse_double(key, value);
    else if (key == "beta2") optimizer.beta2 = parse_double(key, value);
    else if (key == "nu1") optimizer.nu1 = parse_double(key, value);
    else if (key == "nu2") optimizer.nu2 = parse_double(key, value);
    else if (key == "eps") optimizer.eps = parse_double(key, value);
    else if (key == "d_steps") d_steps = parse_int<int>(key, value);
    else if (key == "seed") seed = parse_int<uint64_t>(key, value);
    else if (key == "data_seed") data_seed = parse_int<uint64_t>(key, value);
    else if (key == "noise_seed") noise_seed = parse_int<uint64_t>(key, value);
    else if (key == "feature_seed") feature_seed = parse_int<uint64_t>(key, value);
    else if (key == "divergence_factor") divergence_factor = parse_double(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        const auto hash = line.find('#');
        line = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        }
        try {
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::out_of_range&) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": value out of range");
        }
    }
    return cfg;
}

TrainConfig TrainConfig::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

namespace {
// Shortest text that parses back to the same double.
std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}
}  // namespace

std::string TrainConfig::str() const {
    std::ostringstream os;
    os << "track=" << to_string(track) << "\ndata=" << data.string() << "\nvalidation=" << validation.string()
       << "\nout=" << out.string() << "\ninit=" << init.string() << "\nlog=" << log.string() << "\nmu=" << mu
       << "\nlevels=" << levels << "\nschedule=" << join(schedule) << "\nfilter_size=" << filter_size
       << "\ndisc_widths=" << join(discriminator.widths) << "\ndisc_layers=" << discriminator.layers
       << "\nbatch=" << batch << "\npatch=" << patch << "\nsteps=" << steps << "\nepoch_batches=" << epoch_batches
       << "\nvalidation_patch=" << validation_patch << "\nlr=" << num(optimizer.lr) << "\nbeta1=" << num(optimizer.beta1)
       << "\nbeta2=" << num(optimizer.beta2) << "\nnu1=" << num(optimizer.nu1) << "\nnu2=" << num(optimizer.nu2)
       << "\neps=" << num(optimizer.eps) << "\nd_steps=" << d_steps << "\nseed=" << seed << "\ndata_seed=" << data_seed
       << "\nnoise_seed=" << noise_seed << "\nfeature_seed=" << feature_seed
       << "\ndivergence_factor=" << num(divergence_factor) << "\n";
    return os.str();
}

void TrainConfig::validate() const {
    if (data.empty()) throw std::invalid_argument("config: 'data' (prepared dataset directory) is required");
    if (out.empty()) throw std::invalid_argument("config: 'out' (checkpoint directory) is required");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (patch < 64) throw std::invalid_argument("config: patch must be >= 64 (LR inputs are 16x downscales)");
    if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
    if (epoch_batches < 1) throw std::invalid_argument("config: epoch_batches must be >= 1");
    if (validation_patch != 0 && validation_patch < 64) throw std::invalid_argument("config: validation_patch must be >= 64");
    if (d_steps < 1) throw std::invalid_argument("config: d_steps must be >= 1");
    if (!(divergence_factor > 1)) throw std::invalid_argument("config: divergence_factor must exceed 1");
    optimizer.validate();
    const auto p = plan();
    if (patch < p.min_input_size()) {
        throw std::invalid_argument("config: patch " + std::to_string(patch) + " is below the network minimum " +
                                    std::to_string(p.min_input_size()));
    }
    if (track == Track::perceptual) {
        if (discriminator.widths.empty()) throw std::invalid_argument("config: disc_widths must not be empty");
        const int64_t need = int64_t{4} << (discriminator.widths.size() - 1);
        if (patch < need) throw std::invalid_argument("config: patch too small for the discriminator pyramid");
    }
}

NetworkPlan TrainConfig::plan() const {
    return unfold(mu, levels, schedule, filter_size);
}

double StepRecord::value(const std::string& name) const {
    for (const auto& [n, v] : terms)
        if (n == name) return v;
    throw std::out_of_range("no loss term '" + name + "'");
}

void log_record(std::ostream& os, const StepRecord& r) {
    const auto prec = os.precision(9);
    for (const auto& [name, v] : r.terms) os << r.step << '\t' << name << '\t' << v << '\n';
    os << r.step << "\ttotal\t" << r.total << '\n';
    if (r.d_loss != 0.0 || r.noise_seed != 0) {
        os << r.step << "\trsgan_d\t" << r.d_loss << '\n';
        os << r.step << "\tnoise_seed\t" << r.noise_seed << '\n';
    }
    if (r.skipped) os << r.step << "\tskipped\t1\n";
    os.precision(prec);
}

FidelityTrainer::FidelityTrainer(NetworkPlan plan, GeneratorWeights<float> weights, QHAdamConfig opt)
    : plan_(std::move(plan)), weights_(std::move(weights)), opt_(opt) {
    weights_.validate(plan_);
    weights_.set_requires_grad(true);
}

StepRecord FidelityTrainer::step(const Batch& batch) {
    auto params = weights_.parameters();
    zero_grads(params);
    const auto y = forward(batch.lr, NoiseConfig{0.0, 0}, plan_, weights_);
    auto report = fidelity_loss(y, batch.hr);
    report.total.backward();
    StepRecord r;
    r.step = steps_++;
    r.terms = report_terms(report);
    r.total = report.total.item();
    r.skipped = !std::isfinite(r.total) || !opt_.step(params);
    zero_grads(params);
    return r;
}

PerceptualTrainer::PerceptualTrainer(NetworkPlan plan, GeneratorWeights<float> g, DiscriminatorWeights<float> d,
                                     QHAdamConfig opt, uint64_t noise_seed, uint64_t feature_seed, int d_steps)
    : plan_(std::move(plan)),
      g_(std::move(g)),
      d_(std::move(d)),
      opt_g_(opt),
      opt_d_(opt),
      noise_seed_(noise_seed),
      extractor_(feature_seed),
      d_steps_(d_steps) {
    g_.validate(plan_);
    d_.validate();
    if (d_steps_ < 1) throw std::invalid_argument("d_steps must be >= 1");
}

StepRecord PerceptualTrainer::step(const Batch& batch) {
    const Shape s = batch.hr.shape();
    StepRecord r;
    r.step = steps_;
    r.noise_seed = noise_seed_for(steps_);
    ++steps_;
    const Tensor noise1 = sample_noise<float>(s.n, s.h, s.w, {1.0, r.noise_seed});
    const Tensor noise0 = Tensor::zeros({s.n, 1, s.h, s.w});
    auto g_params = g_.parameters();
    auto d_params = d_.parameters();
    bool skipped = false;

    // Discriminator updates against a fixed generator output.
    g_.set_requires_grad(false);
    d_.set_requires_grad(true);
    Tensor fake;
    {
        NoGradGuard no_grad;
        fake = forward(batch.lr, noise1, plan_, g_);
    }
    for (int k = 0; k < d_steps_; ++k) {
        zero_grads(d_params);
        const auto losses = rsgan_losses(discriminate(batch.hr, d_), discriminate(fake, d_));
        losses.discriminator.backward();
        r.d_loss = losses.discriminator.item();
        if (!std::isfinite(r.d_loss) || !opt_d_.step(d_params)) skipped = true;
    }
    zero_grads(d_params);

    // Generator update through a frozen discriminator.
    d_.set_requires_grad(false);
    g_.set_requires_grad(true);
    zero_grads(g_params);
    const auto y1 = forward(batch.lr, noise1, plan_, g_);
    const auto y0 = forward(batch.lr, noise0, plan_, g_);
    const FeatureFn<float> features = [this](const Tensor& t) { return extractor_(t); };
    auto report = perceptual_loss(y1, y0, batch.hr, d_, features);
    report.total.backward();
    r.terms = report_terms(report);
    r.total = report.total.item();
    if (!std::isfinite(r.total) || !opt_g_.step(g_params)) skipped = true;
    zero_grads(g_params);
    r.skipped = skipped;
    return r;
}

void Checkpoint::save(const fs::path& dir) const {
    fs::create_directories(dir);
    // Metadata last so a reader never sees it next to half-written weights of another run.
    fs::remove(dir / "checkpoint.txt");
    save_weights(dir / "generator.mgbp", plan, generator);
    if (discriminator) save_discriminator(dir / "discriminator.mgbp", *discriminator);
    if (generator_optimizer) generator_optimizer->save(dir / "optimizer_g.mgbp");
    if (discriminator_optimizer) discriminator_optimizer->save(dir / "optimizer_d.mgbp");
    std::ofstream meta(dir / "checkpoint.txt");
    meta << std::setprecision(17) << "track=" << to_string(track) << "\nepoch=" << epoch << "\nstep=" << step
         << "\nbest_validation=" << best_validation << "\n";
    if (!meta) throw std::runtime_error("cannot write checkpoint metadata in " + dir.string());
}

Checkpoint Checkpoint::load(const fs::path& dir) {
    std::ifstream meta(dir / "checkpoint.txt");
    if (!meta) throw std::runtime_error("no checkpoint in " + dir.string());
    std::map<std::string, std::string> kv;
    for (std::string line; std::getline(meta, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"track", "epoch", "step", "best_validation"}) {
        if (!kv.count(key)) throw std::runtime_error("checkpoint metadata lacks '" + std::string(key) + "'");
    }
    Checkpoint c;
    c.track = parse_track(kv["track"]);
    c.epoch = std::stoll(kv["epoch"]);
    c.step = std::stoll(kv["step"]);
    c.best_validation = std::stod(kv["best_validation"]);
    auto [plan, weights] = load_weights(dir / "generator.mgbp");
    c.plan = std::move(plan);
    c.generator = std::move(weights);
    if (fs::exists(dir / "discriminator.mgbp")) c.discriminator = load_discriminator(dir / "discriminator.mgbp");
    if (fs::exists(dir / "optimizer_g.mgbp")) c.generator_optimizer = QHAdam::load(dir / "optimizer_g.mgbp");
    if (fs::exists(dir / "optimizer_d.mgbp")) c.discriminator_optimizer = QHAdam::load(dir / "optimizer_d.mgbp");
    return c;
}

std::vector<Tensor> load_validation_set(const fs::path& dir, int64_t patch) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Tensor> out;
    for (const auto& f : files) out.push_back(center_patch(read_png(f), patch));
    if (out.empty()) throw TrainingError("validation directory " + dir.string() + " has no PNG images");
    return out;
}

std::vector<Tensor> validation_from_layout(const PatchLayout& layout, int64_t patch) {
    std::vector<Tensor> out;
    for (size_t i = 0; i < layout.image_count(); ++i) out.push_back(center_patch(read_png(layout.patches(i)[0]), patch));
    return out;
}

DivergenceMonitor::DivergenceMonitor(double factor, int64_t window) : factor_(factor), window_(window) {}

void DivergenceMonitor::observe(const StepRecord& r) {
    if (!initial_) {
        if (std::isfinite(r.total)) initial_ = r.total;
        return;
    }
    const bool high = !std::isfinite(r.total) || r.total > factor_ * *initial_;
    run_ = high ? run_ + 1 : 0;
    if (run_ >= window_) {
        std::ostringstream os;
        os << "training diverged at step " << r.step << ": loss " << r.total << " stayed above " << factor_
           << "x the initial " << *initial_ << " for " << window_ << " steps";
        throw TrainingError(os.str());
    }
}

double validate_fidelity(const NetworkPlan& plan, const GeneratorWeights<float>& w, const std::vector<Tensor>& hr) {
    NoGradGuard no_grad;
    double sum = 0.0;
    for (const auto& x : hr) {
        const auto y = forward(degrade(x), NoiseConfig{0.0, 0}, plan, w);
        sum += fidelity_validation(y, x).item();
    }
    return sum / static_cast<double>(hr.size());
}

double validate_perceptual(const NetworkPlan& plan, const GeneratorWeights<float>& w, const std::vector<Tensor>& hr,
                           const ImageMetric& metric, uint64_t noise_seed) {
    NoGradGuard no_grad;
    double sum = 0.0;
    for (const auto& x : hr) {
        const auto y = forward(degrade(x), NoiseConfig{1.0, noise_seed}, plan, w);
        sum += perceptual_validation(y, metric);
    }
    return sum / static_cast<double>(hr.size());
}

namespace {

struct LoopSetup {
    NetworkPlan plan;
    GeneratorWeights<float> weights;
    PatchSampler sampler;
    std::vector<Tensor> validation;
};

LoopSetup setup(const TrainConfig& cfg) {
    cfg.validate();
    NetworkPlan plan = cfg.plan();
    GeneratorWeights<float> weights;
    if (!cfg.init.empty()) {
        auto [p, w] = load_weights(cfg.init);
        if (!(p == plan)) throw std::invalid_argument("init weights were built for a different plan");
        weights = std::move(w);
    } else {
        weights = GeneratorWeights<float>::init(plan, cfg.seed);
    }
    auto layout = PatchLayout::open(cfg.data);
    if (layout.image_count() == 0) throw TrainingError("dataset " + cfg.data.string() + " has no usable patches");
    if (cfg.patch > layout.prep_patch()) {
        throw std::invalid_argument("training patch " + std::to_string(cfg.patch) + " exceeds prep patch " +
                                    std::to_string(layout.prep_patch()));
    }
    const int64_t vpatch = cfg.validation_patch ? cfg.validation_patch : cfg.patch;
    auto validation = cfg.validation.empty() ? validation_from_layout(layout, vpatch)
                                             : load_validation_set(cfg.validation, vpatch);
    return {std::move(plan), std::move(weights), PatchSampler(std::move(layout), cfg.data_seed), std::move(validation)};
}

// Tees log lines to the caller's stream and the configured log file.
class LogSink {
  public:
    LogSink(std::ostream& primary, const fs::path& file) : primary_(primary) {
        if (!file.empty()) {
            file_.open(file);
            if (!file_) throw std::runtime_error("cannot open log " + file.string());
        }
    }
    void write(const std::string& s) {
        primary_ << s;
        primary_.flush();
        if (file_.is_open()) {
            file_ << s;
            file_.flush();
        }
    }

  private:
    std::ostream& primary_;
    std::ofstream file_;
};

std::string kv_line(int64_t step, const char* name, double v) {
    std::ostringstream os;
    os << std::setprecision(9) << step << '\t' << name << '\t' << v << '\n';
    return os.str();
}

}  // namespace

TrainResult train_fidelity(const TrainConfig& cfg, std::ostream& log) {
    if (cfg.track != Track::fidelity) throw std::invalid_argument("train_fidelity needs track=fidelity");
    auto s = setup(cfg);
    LogSink sink(log, cfg.log);
    FidelityTrainer trainer(s.plan, std::move(s.weights), cfg.optimizer);
    DivergenceMonitor watch(cfg.divergence_factor, cfg.epoch_batches);
    TrainResult result;
    result.best_validation = std::numeric_limits<double>::infinity();
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const auto rec = trainer.step(s.sampler.sample_batch(cfg.batch, cfg.patch));
        std::ostringstream os;
        log_record(os, rec);
        sink.write(os.str());
        watch.observe(rec);
        result.history.push_back(rec);
        result.steps = step + 1;
        if ((step + 1) % cfg.epoch_batches != 0 && step + 1 != cfg.steps) continue;
        ++result.epochs;
        const double v = validate_fidelity(s.plan, trainer.weights(), s.validation);
        result.validation.push_back(v);
        sink.write(kv_line(step, "validation_l2", v));
        if (v < result.best_validation) {
            result.best_validation = v;
            result.saved_best.push_back(v);
            Checkpoint c{Track::fidelity, s.plan, trainer.weights().clone(), std::nullopt, trainer.optimizer(),
                         std::nullopt, result.epochs, step + 1, v};
            c.save(cfg.out);
            sink.write(kv_line(step, "checkpoint", v));
        }
    }
    return result;
}

TrainResult train_perceptual(const TrainConfig& cfg, std::ostream& log, const ImageMetric& metric) {
    if (cfg.track != Track::perceptual) throw std::invalid_argument("train_perceptual needs track=perceptual");
    auto s = setup(cfg);
    LogSink sink(log, cfg.log);
    PerceptualTrainer trainer(s.plan, std::move(s.weights),
                              DiscriminatorWeights<float>::init(cfg.discriminator, cfg.seed + 1), cfg.optimizer,
                              cfg.noise_seed, cfg.feature_seed, cfg.d_steps);
    DivergenceMonitor watch(cfg.divergence_factor, cfg.epoch_batches);
    TrainResult result;
    result.best_validation = std::numeric_limits<double>::infinity();
    for (int64_t step = 0; step < cfg.steps; ++step) {
        const auto rec = trainer.step(s.sampler.sample_batch(cfg.batch, cfg.patch));
        std::ostringstream os;
        log_record(os, rec);
        sink.write(os.str());
        watch.observe(rec);
        result.history.push_back(rec);
        result.steps = step + 1;
        if ((step + 1) % cfg.epoch_batches != 0 && step + 1 != cfg.steps) continue;
        ++result.epochs;
        const double v = validate_perceptual(s.plan, trainer.generator(), s.validation, metric, cfg.noise_seed);
        result.validation.push_back(v);
        sink.write(kv_line(step, "validation_metric", v));
        if (v < result.best_validation) {
            result.best_validation = v;
            result.saved_best.push_back(v);
            Checkpoint c{Track::perceptual,
                         s.plan,
                         trainer.generator().clone(),
                         trainer.discriminator().clone(),
                         trainer.generator_optimizer(),
                         trainer.discriminator_optimizer(),
                         result.epochs,
                         step + 1,
                         v};
            c.save(cfg.out);
            sink.write(kv_line(step, "checkpoint", v));
        }
    }
    return result;
}

TrainResult train(const TrainConfig& cfg, std::ostream& log) {
    return cfg.track == Track::fidelity ? train_fidelity(cfg, log) : train_perceptual(cfg, log);
}

}  // namespace mgbp
