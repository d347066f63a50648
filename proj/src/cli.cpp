#include "mgbp/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "mgbp/data.hpp"
#include "mgbp/image_io.hpp"
#include "mgbp/losses.hpp"
#include "mgbp/ops.hpp"
#include "mgbp/plan.hpp"
#include "mgbp/resample.hpp"
#include "mgbp/tiled.hpp"
#include "mgbp/trainer.hpp"
#include "mgbp/weights_io.hpp"

namespace fs = std::filesystem;

namespace mgbp {

namespace {

const std::vector<int64_t> kFullSchedule = {256, 192, 128, 92, 48, 9};
const std::vector<int64_t> kDeskSchedule = {32, 24, 16, 8};

struct PlanFlags {
    std::string preset = "desk";
    int mu = 2;
    int levels = 0;
    std::vector<int64_t> schedule;
    int filter = 3;

    void attach(CLI::App* app) {
        app->add_option("--preset", preset, "Base plan: desk (4 levels, 32..8 features) or full (6 levels, 256..9)")
            ->check(CLI::IsMember({"desk", "full"}));
        app->add_option("--mu", mu, "Recursive calls per level")->check(CLI::PositiveNumber);
        app->add_option("--levels", levels, "Multigrid levels (0 = preset); other counts take the finest entries "
                                            "of the full schedule");
        app->add_option("--schedule", schedule, "Features per level, coarse to fine (overrides --levels)")
            ->delimiter(',');
        app->add_option("--filter", filter, "Filter size of analysis/synthesis convs")->check(CLI::PositiveNumber);
    }

    NetworkPlan build() const {
        std::vector<int64_t> s = schedule;
        if (s.empty()) {
            const auto& base = preset == "full" ? kFullSchedule : kDeskSchedule;
            const size_t want = levels > 0 ? static_cast<size_t>(levels) : base.size();
            if (want == base.size()) {
                s = base;
            } else if (want <= kFullSchedule.size()) {
                s.assign(kFullSchedule.end() - static_cast<std::ptrdiff_t>(want), kFullSchedule.end());
            } else {
                throw std::invalid_argument("--levels " + std::to_string(levels) + " needs an explicit --schedule");
            }
        } else if (levels > 0 && static_cast<size_t>(levels) != s.size()) {
            throw std::invalid_argument("--levels " + std::to_string(levels) + " disagrees with a " +
                                        std::to_string(s.size()) + "-entry --schedule");
        }
        return unfold(mu, static_cast<int>(s.size()), s, filter);
    }
};

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw std::runtime_error(std::string(what) + " " + p.string() + " not found");
}

std::vector<fs::path> png_list(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("directory " + dir.string() + " not found");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::runtime_error("no PNG images in " + dir.string());
    return out;
}

Tensor pre_upscaled(const Tensor& img, int scale) {
    return scale == 1 ? img : bicubic(img, ScaleFactor::up(scale));
}

// Maps a signed response to [0, 1] around mid-grey, scaled by its peak magnitude.
Tensor visualize_signed(const Tensor& r) {
    double peak = 0.0;
    for (float v : r.data()) peak = std::max(peak, static_cast<double>(std::abs(v)));
    std::vector<float> out(r.data().begin(), r.data().end());
    for (auto& v : out) v = peak > 0 ? static_cast<float>(0.5 + 0.5 * v / peak) : 0.5f;
    return Tensor(r.shape(), std::move(out));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multigrid back-projection super-resolution (16x)", args.empty() ? "mgbp" : args[0]};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    // describe
    auto* describe_cmd = app.add_subcommand("describe", "Print the unfolded network plan with module and cost tallies");
    PlanFlags describe_plan;
    describe_plan.attach(describe_cmd);
    std::string describe_weights;
    int64_t describe_h = 0, describe_w = 0;
    bool describe_list = false;
    describe_cmd->add_option("--weights", describe_weights, "Describe the plan stored in a weight file instead");
    describe_cmd->add_option("--height", describe_h, "Input height for the MAC count (0 = skip)");
    describe_cmd->add_option("--width", describe_w, "Input width for the MAC count (0 = height)");
    describe_cmd->add_flag("--list", describe_list, "Also list every module instance");

    // init
    auto* init_cmd = app.add_subcommand("init", "Write seeded random generator weights");
    PlanFlags init_plan;
    init_plan.attach(init_cmd);
    uint64_t init_seed = 1;
    std::string init_out;
    init_cmd->add_option("--seed", init_seed, "Initialization seed");
    init_cmd->add_option("--out", init_out, "Output weight file")->required();

    // prep
    auto* prep_cmd = app.add_subcommand("prep", "Cut training images into folders of overlapping patches");
    std::string prep_src, prep_out;
    int64_t prep_patch = default_prep_patch(64), prep_stride = 64;
    int prep_threads = 1;
    prep_cmd->add_option("--src", prep_src, "Directory of HR PNG images")->required();
    prep_cmd->add_option("--out", prep_out, "Output dataset directory")->required();
    prep_cmd->add_option("--patch", prep_patch, "Stored patch size (training patch + 64)")->check(CLI::PositiveNumber);
    prep_cmd->add_option("--stride", prep_stride, "Distance between patch origins")->check(CLI::PositiveNumber);
    prep_cmd->add_option("--threads", prep_threads, "Worker threads")->check(CLI::PositiveNumber);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the fidelity or perceptual track from a key=value config");
    std::string train_config;
    std::vector<std::string> train_sets;
    bool train_dump = false;
    train_cmd->add_option("--config", train_config, "Config file (key=value lines)");
    train_cmd->add_option("--set", train_sets, "Override one config key (key=value); repeatable");
    train_cmd->add_flag("--print-config", train_dump, "Print the effective config and exit");

    // upscale
    auto* up_cmd = app.add_subcommand("upscale", "Upscale an image with overlapping-patch inference");
    std::string up_weights, up_input, up_output;
    std::vector<std::string> up_ensemble;
    TileConfig up;
    up_cmd->add_option("--weights", up_weights, "Generator weight file");
    up_cmd->add_option("--ensemble", up_ensemble, "Average several weight files (w1,w2,w3)")->delimiter(',');
    up_cmd->add_option("--input", up_input, "Input PNG")->required();
    up_cmd->add_option("--output", up_output, "Output PNG")->required();
    up_cmd->add_option("--patch", up.patch, "Patch size at output resolution")->check(CLI::PositiveNumber);
    up_cmd->add_option("--stride", up.stride, "Distance between patch origins")->check(CLI::PositiveNumber);
    up_cmd->add_option("--noise-amplitude", up.noise_amplitude, "Noise amplitude W (0 = fidelity, 1 = perceptual)")
        ->check(CLI::Range(0.0, 1.0));
    up_cmd->add_option("--seed", up.seed, "Noise seed");
    up_cmd->add_option("--scale", up.scale, "Bicubic pre-upscale of the input (16, or 1 if already upscaled)")
        ->check(CLI::IsMember({1, 16}));
    up_cmd->add_option("--threads", up.threads, "Patches evaluated concurrently")->check(CLI::PositiveNumber);

    // dfv
    auto* dfv_cmd = app.add_subcommand("dfv", "Frozen-activation impulse response of one input pixel");
    std::string dfv_weights, dfv_input, dfv_output;
    int64_t dfv_row = -1, dfv_col = -1, dfv_channel = 0;
    double dfv_noise = 0.0;
    uint64_t dfv_seed = 0;
    int dfv_scale = 16;
    dfv_cmd->add_option("--weights", dfv_weights, "Generator weight file")->required();
    dfv_cmd->add_option("--input", dfv_input, "Input PNG")->required();
    dfv_cmd->add_option("--output", dfv_output, "Output PNG (mid-grey = 0)")->required();
    dfv_cmd->add_option("--row", dfv_row, "Pixel row after pre-upscaling (-1 = centre)");
    dfv_cmd->add_option("--col", dfv_col, "Pixel column after pre-upscaling (-1 = centre)");
    dfv_cmd->add_option("--channel", dfv_channel, "Input channel (0-2 RGB, 3 noise)")->check(CLI::Range(0, 3));
    dfv_cmd->add_option("--noise-amplitude", dfv_noise, "Noise amplitude W")->check(CLI::Range(0.0, 1.0));
    dfv_cmd->add_option("--seed", dfv_seed, "Noise seed");
    dfv_cmd->add_option("--scale", dfv_scale, "Bicubic pre-upscale of the input")->check(CLI::IsMember({1, 16}));

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Validation metric of a model over a directory of HR images");
    std::string eval_weights, eval_dir, eval_track = "fidelity";
    int64_t eval_patch = 0;
    uint64_t eval_seed = 0;
    eval_cmd->add_option("--weights", eval_weights, "Generator weight file")->required();
    eval_cmd->add_option("--dir", eval_dir, "Directory of HR PNG images")->required();
    eval_cmd->add_option("--track", eval_track, "fidelity (L2 at W=0) or perceptual (metric at W=1)")
        ->check(CLI::IsMember({"fidelity", "perceptual"}));
    eval_cmd->add_option("--patch", eval_patch, "Centre crop size (0 = whole image)");
    eval_cmd->add_option("--seed", eval_seed, "Noise seed for the perceptual track");

    std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rest.begin(), rest.end());  // CLI11 consumes a reversed vector
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*describe_cmd) {
            const NetworkPlan plan =
                describe_weights.empty() ? describe_plan.build() : load_weights(describe_weights).first;
            const int64_t w = describe_w > 0 ? describe_w : describe_h;
            std::string text = describe(plan, describe_h, w);
            if (!describe_list) text = text.substr(0, text.find("instances:\n"));
            out << text;
        } else if (*init_cmd) {
            const auto plan = init_plan.build();
            save_weights(init_out, plan, GeneratorWeights<float>::init(plan, init_seed));
            out << "wrote " << init_out << " (" << plan.parameter_count() << " parameters)\n";
        } else if (*prep_cmd) {
            const auto m = prep_dataset(prep_src, prep_out, prep_patch, prep_stride, prep_threads);
            int64_t ok = 0, patches = 0;
            for (const auto& e : m.entries) {
                if (e.status == "ok") ++ok, patches += e.patch_count;
                else out << e.path << ": " << e.status << "\n";
            }
            out << "prepared " << ok << " of " << m.entries.size() << " images, " << patches << " patches\n";
        } else if (*train_cmd) {
            TrainConfig cfg = train_config.empty() ? TrainConfig{} : TrainConfig::from_file(train_config);
            for (const auto& kv : train_sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
                cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (train_dump) {
                out << cfg.str();
                return 0;
            }
            const auto r = train(cfg, out);
            out << std::setprecision(9) << "best_validation\t" << r.best_validation << "\nsteps\t" << r.steps
                << "\nepochs\t" << r.epochs << "\n";
        } else if (*up_cmd) {
            if (up_weights.empty() == up_ensemble.empty()) {
                throw std::invalid_argument("give exactly one of --weights or --ensemble");
            }
            require_file(up_input, "input");
            const Tensor lr = read_png(up_input);
            Tensor y;
            if (!up_ensemble.empty()) {
                std::vector<System> systems;
                for (const auto& f : up_ensemble) {
                    require_file(f, "weights");
                    auto [plan, w] = load_weights(f);
                    systems.push_back({std::move(plan), std::move(w)});
                }
                y = ensemble_upscale(lr, systems, up);
            } else {
                require_file(up_weights, "weights");
                const auto [plan, w] = load_weights(up_weights);
                y = upscale_image(lr, plan, w, up);
            }
            write_png(up_output, y);
            out << "wrote " << up_output << " (" << y.shape().h << "x" << y.shape().w << ")\n";
        } else if (*dfv_cmd) {
            require_file(dfv_weights, "weights");
            require_file(dfv_input, "input");
            const auto [plan, w] = load_weights(dfv_weights);
            const Tensor rgb = pre_upscaled(read_png(dfv_input), dfv_scale);
            const Shape s = rgb.shape();
            const int64_t row = dfv_row < 0 ? s.h / 2 : dfv_row;
            const int64_t col = dfv_col < 0 ? s.w / 2 : dfv_col;
            const auto r = dfv_impulse_response(rgb, NoiseConfig{dfv_noise, dfv_seed}, plan, w, row, col, dfv_channel);
            write_png(dfv_output, visualize_signed(r));
            out << "wrote " << dfv_output << " (impulse at " << row << "," << col << " channel " << dfv_channel << ")\n";
        } else if (*eval_cmd) {
            require_file(eval_weights, "weights");
            const auto [plan, w] = load_weights(eval_weights);
            double total = 0.0;
            const auto files = png_list(eval_dir);
            out << std::setprecision(9);
            for (const auto& f : files) {
                Tensor x = read_png(f);
                if (eval_patch > 0) {
                    const Shape s = x.shape();
                    if (s.h < eval_patch || s.w < eval_patch) {
                        throw std::invalid_argument(f.string() + " is smaller than --patch " + std::to_string(eval_patch));
                    }
                    x = crop_region(x, (s.h - eval_patch) / 2, (s.w - eval_patch) / 2, eval_patch, eval_patch);
                }
                double v;
                if (eval_track == "fidelity") {
                    v = validate_fidelity(plan, w, {x});
                    out << f.filename().string() << "\tl2\t" << v << "\tpsnr\t" << psnr_from_mse(v) << "\n";
                } else {
                    v = validate_perceptual(plan, w, {x}, contrast_proxy_metric, eval_seed);
                    out << f.filename().string() << "\tmetric\t" << v << "\n";
                }
                total += v;
            }
            out << "mean\t" << total / static_cast<double>(files.size()) << "\n";
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << msg << "\n";
        return 1;
    }
    return 0;
}

}  // namespace mgbp
