#pragma once

#include <filesystem>
#include <stdexcept>

#include "mgbp/tensor.hpp"

namespace mgbp {

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Decodes any PNG to a (1, 3, H, W) tensor with values k / 255.
Tensor read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor& img);

}  // namespace mgbp
