#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mgbp/discriminator.hpp"
#include "mgbp/generator.hpp"
#include "mgbp/plan.hpp"

namespace mgbp {

struct WeightFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One named float32 array of a container file.
struct WeightBlock {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

/// Container layout (all integers little-endian):
///   magic "MGBPWTS1" | u32 version | u32 len + descriptor text | u32 block count
///   per block: u32 len + name | u32 rank (4) | rank x i64 dims | u64 byte length | float32 data
struct WeightFile {
    static constexpr char kMagic[8] = {'M', 'G', 'B', 'P', 'W', 'T', 'S', '1'};
    static constexpr uint32_t kVersion = 1;

    std::string descriptor;
    std::vector<WeightBlock> blocks;

    /// Bytes of the file that are not parameter data.
    int64_t header_bytes() const;
};

void write_weight_file(const std::filesystem::path& path, const WeightFile& file);
WeightFile read_weight_file(const std::filesystem::path& path);

/// Generator weights in plan order; the descriptor is the plan's, so loading
/// rebuilds the plan.
WeightFile generator_file(const NetworkPlan& plan, const GeneratorWeights<float>& weights);
void save_weights(const std::filesystem::path& path, const NetworkPlan& plan, const GeneratorWeights<float>& weights);
std::pair<NetworkPlan, GeneratorWeights<float>> load_weights(const std::filesystem::path& path);

void save_discriminator(const std::filesystem::path& path, const DiscriminatorWeights<float>& weights);
DiscriminatorWeights<float> load_discriminator(const std::filesystem::path& path);

}  // namespace mgbp
