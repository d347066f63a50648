#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mgbp/tensor.hpp"

namespace mgbp {

/// One manifest record: image directory (relative to the dataset root), the
/// number of patch files, the prep geometry and "ok", "skipped: ..." or "error: ...".
struct ManifestEntry {
    std::string path;
    int64_t patch_count = 0;
    int64_t patch = 0;
    int64_t stride = 0;
    std::string status = "ok";
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    static constexpr const char* kFileName = "manifest.txt";
    void write(const std::filesystem::path& file) const;
    static Manifest read(const std::filesystem::path& file);
};

/// Prep patch side for a training patch: slightly larger, leaving room for random crops.
inline int64_t default_prep_patch(int64_t train_patch) {
    return train_patch + 64;
}

/// File name of the patch at a grid origin.
std::string patch_file_name(int64_t row, int64_t col);

/// Splits every PNG in `src_dir` into overlapping prep patches stored as
/// out_dir/<stem>/r<row>_c<col>.png and writes out_dir/manifest.txt.
Manifest prep_dataset(const std::filesystem::path& src_dir, const std::filesystem::path& out_dir, int64_t prep_patch,
                      int64_t prep_stride, int threads = 1);

/// A prepared dataset: usable images and their patch files (sorted).
class PatchLayout {
  public:
    static PatchLayout open(const std::filesystem::path& root);
    /// Builds a layout directly from file lists (one list per image).
    static PatchLayout from_files(std::vector<std::vector<std::filesystem::path>> files, int64_t patch);

    size_t image_count() const { return files_.size(); }
    const std::vector<std::filesystem::path>& patches(size_t image) const { return files_.at(image); }
    int64_t prep_patch() const { return patch_; }

  private:
    std::vector<std::vector<std::filesystem::path>> files_;
    int64_t patch_ = 0;
};

struct Batch {
    Tensor lr;  // bicubic 16x re-upscale of S16(hr), same size as hr
    Tensor hr;
};

/// LR input for an HR patch: bicubic 16x upscale of its S16 downscale, cropped to the HR size.
Tensor degrade(const Tensor& hr);

/// Three-stage sampler: uniform image, then uniform patch file inside it,
/// then a uniform crop inside that file.
class PatchSampler {
  public:
    PatchSampler(PatchLayout layout, uint64_t seed);

    /// Stages one and two: (image index, patch file index).
    std::pair<size_t, size_t> draw_location();
    Batch sample_batch(int64_t batch, int64_t train_patch);
    const PatchLayout& layout() const { return layout_; }

  private:
    PatchLayout layout_;
    std::mt19937_64 rng_;
};

}  // namespace mgbp
