#include "mgbp/data.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mgbp/image_io.hpp"
#include "mgbp/ops.hpp"
#include "mgbp/resample.hpp"
#include "mgbp/tiled.hpp"

namespace fs = std::filesystem;

namespace mgbp {

namespace {

bool is_png(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

std::vector<fs::path> png_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_png(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

ManifestEntry prep_one(const fs::path& src, const fs::path& out_dir, int64_t patch, int64_t stride) {
    ManifestEntry e{src.stem().string(), 0, patch, stride, "ok"};
    Tensor img;
    try {
        img = read_png(src);
    } catch (const ImageError& err) {
        e.status = std::string("error: ") + err.what();
        return e;
    }
    const Shape s = img.shape();
    if (s.h < patch || s.w < patch) {
        e.status = "skipped: " + std::to_string(s.h) + "x" + std::to_string(s.w) + " smaller than patch";
        std::cerr << "warning: " << src.string() << " is " << s.h << "x" << s.w << ", smaller than prep patch "
                  << patch << "; skipped\n";
        return e;
    }
    const fs::path dir = out_dir / e.path;
    fs::create_directories(dir);
    for (const auto& old : png_files(dir)) fs::remove(old);
    const auto grid = plan_tiles(s.h, s.w, patch, stride);
    for (auto [r, c] : grid.origins) write_png(dir / patch_file_name(r, c), crop_region(img, r, c, patch, patch));
    e.patch_count = static_cast<int64_t>(grid.origins.size());
    return e;
}

}  // namespace

std::string patch_file_name(int64_t row, int64_t col) {
    return "r" + std::to_string(row) + "_c" + std::to_string(col) + ".png";
}

void Manifest::write(const fs::path& file) const {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write manifest " + file.string());
    out << "# path\tpatch_count\tprep_patch\tprep_stride\tstatus\n";
    for (const auto& e : entries) {
        out << e.path << '\t' << e.patch_count << '\t' << e.patch << '\t' << e.stride << '\t' << e.status << '\n';
    }
}

Manifest Manifest::read(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read manifest " + file.string());
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        ManifestEntry e;
        std::string count, patch, stride;
        if (!std::getline(fields, e.path, '\t') || !std::getline(fields, count, '\t') ||
            !std::getline(fields, patch, '\t') || !std::getline(fields, stride, '\t') ||
            !std::getline(fields, e.status)) {
            throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
        }
        e.patch_count = std::stoll(count);
        e.patch = std::stoll(patch);
        e.stride = std::stoll(stride);
        m.entries.push_back(std::move(e));
    }
    return m;
}

Manifest prep_dataset(const fs::path& src_dir, const fs::path& out_dir, int64_t prep_patch, int64_t prep_stride,
                      int threads) {
    if (prep_patch < 1 || prep_stride < 1 || prep_stride > prep_patch) {
        throw std::invalid_argument("prep stride must be in [1, prep patch]");
    }
    if (!fs::is_directory(src_dir)) throw std::runtime_error("source directory " + src_dir.string() + " not found");
    const auto sources = png_files(src_dir);
    fs::create_directories(out_dir);

    Manifest m;
    m.entries.resize(sources.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next++; i < sources.size(); i = next++) {
            m.entries[i] = prep_one(sources[i], out_dir, prep_patch, prep_stride);
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(sources.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    m.write(out_dir / Manifest::kFileName);
    return m;
}

PatchLayout PatchLayout::open(const fs::path& root) {
    const auto m = Manifest::read(root / Manifest::kFileName);
    PatchLayout l;
    for (const auto& e : m.entries) {
        if (e.status != "ok") continue;
        auto files = png_files(root / e.path);
        if (static_cast<int64_t>(files.size()) != e.patch_count) {
            throw std::runtime_error("manifest lists " + std::to_string(e.patch_count) + " patches for " + e.path +
                                     ", directory has " + std::to_string(files.size()));
        }
        if (l.patch_ != 0 && l.patch_ != e.patch) throw std::runtime_error("mixed prep patch sizes in " + root.string());
        l.patch_ = e.patch;
        if (!files.empty()) l.files_.push_back(std::move(files));
    }
    return l;
}

PatchLayout PatchLayout::from_files(std::vector<std::vector<fs::path>> files, int64_t patch) {
    PatchLayout l;
    for (auto& f : files)
        if (!f.empty()) l.files_.push_back(std::move(f));
    l.patch_ = patch;
    return l;
}

Tensor degrade(const Tensor& hr) {
    NoGradGuard no_grad;
    const Shape s = hr.shape();
    const auto up = bicubic(bicubic(hr, ScaleFactor::down(16)), ScaleFactor::up(16));
    return crop_to(up, s.h, s.w);
}

PatchSampler::PatchSampler(PatchLayout layout, uint64_t seed) : layout_(std::move(layout)), rng_(seed) {
    if (layout_.image_count() == 0) throw std::invalid_argument("dataset has no usable patches");
}

std::pair<size_t, size_t> PatchSampler::draw_location() {
    std::uniform_int_distribution<size_t> pick_image(0, layout_.image_count() - 1);
    const size_t image = pick_image(rng_);
    std::uniform_int_distribution<size_t> pick_file(0, layout_.patches(image).size() - 1);
    return {image, pick_file(rng_)};
}

Batch PatchSampler::sample_batch(int64_t batch, int64_t train_patch) {
    if (batch < 1) throw std::invalid_argument("batch size must be positive");
    const int64_t P = train_patch;
    std::vector<float> hr(static_cast<size_t>(batch * 3 * P * P));
    for (int64_t b = 0; b < batch; ++b) {
        const auto [image, file] = draw_location();
        const Tensor src = read_png(layout_.patches(image)[file]);
        const Shape s = src.shape();
        if (s.h < P || s.w < P) {
            throw std::invalid_argument("training patch " + std::to_string(P) + " exceeds stored patch " +
                                        std::to_string(s.h) + "x" + std::to_string(s.w));
        }
        const int64_t top = std::uniform_int_distribution<int64_t>(0, s.h - P)(rng_);
        const int64_t left = std::uniform_int_distribution<int64_t>(0, s.w - P)(rng_);
        const auto crop = crop_region(src, top, left, P, P);
        std::copy(crop.data().begin(), crop.data().end(), hr.begin() + b * 3 * P * P);
    }
    Tensor hr_t({batch, 3, P, P}, std::move(hr));
    return {degrade(hr_t), hr_t};
}

}  // namespace mgbp
