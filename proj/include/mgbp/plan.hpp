#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mgbp/ops.hpp"

namespace mgbp {

enum class ModuleKind { analysis, downscale, upscale, synthesis };

const char* to_string(ModuleKind kind);

/// Identity of one module instance: kind, multigrid level and the loop-step
/// path from the recursion root (empty for Analysis and Synthesis).
struct ModuleTag {
    ModuleKind kind = ModuleKind::analysis;
    int level = 0;
    std::vector<int> path;

    /// Stable text form, e.g. "analysis.3", "down.4.1-2", "synthesis".
    std::string str() const;
    static ModuleTag parse(const std::string& text);

    friend auto operator<=>(const ModuleTag&, const ModuleTag&) = default;
    friend bool operator==(const ModuleTag&, const ModuleTag&) = default;
};

struct ModuleInstance {
    ModuleTag tag;
    ConvSpec conv;
};

/// The unfolded multigrid back-projection network: every uniquely tagged
/// module in execution order.
struct NetworkPlan {
    int mu = 2;
    int levels = 6;
    std::vector<int64_t> feature_schedule;  // w_1..w_L, coarse to fine
    int filter_size = 3;
    int noise_channels = 1;
    std::vector<ModuleInstance> instances;

    int64_t input_channels() const { return 3 + noise_channels; }
    int64_t count(ModuleKind kind) const;
    int64_t parameter_count() const;
    /// Index of a tag in `instances`, if present.
    std::optional<size_t> find(const ModuleTag& tag) const;
    /// Smallest input side accepted by the generator.
    int64_t min_input_size() const;
    /// Compact key=value description (mu, levels, schedule, filter size).
    std::string descriptor() const;
    static NetworkPlan from_descriptor(const std::string& text);

    friend bool operator==(const NetworkPlan& a, const NetworkPlan& b);
};

/// Dry run of the recursion: enumerates Analysis_1..L, the Downscale/recurse/
/// Upscale trace of the level-L back-projection, then Synthesis.
NetworkPlan unfold(int mu, int levels, const std::vector<int64_t>& feature_schedule, int filter_size);

/// levels = 6, schedule [256, 192, 128, 92, 48, 9], mu = 2, 3x3 filters.
NetworkPlan default_plan(int filter_size = 3);
/// levels = 4, schedule [32, 24, 16, 8], mu = 2.
NetworkPlan desk_plan(int filter_size = 3);

/// Number of Upscale (equivalently Downscale) modules: sum_{k=2}^{L} mu^{L-k+1}.
int64_t bp_module_count(int mu, int levels);

/// Spatial side of level k for an input side of `size`.
int64_t level_size(const NetworkPlan& plan, int level, int64_t size);

struct InstanceShapes {
    Shape input;
    Shape output;  // convolution output, before any crop to the skip shape
};

/// Replays the instance list on shapes only (batch 1). Throws if the order
/// is inconsistent with the recursion.
std::vector<InstanceShapes> trace_shapes(const NetworkPlan& plan, int64_t height, int64_t width);

/// Multiply-accumulate count of one forward pass at the given input extent.
int64_t count_cost(const NetworkPlan& plan, int64_t height, int64_t width);

/// Human-readable listing of tags, conv specs and parameter counts.
std::string describe(const NetworkPlan& plan, int64_t height = 0, int64_t width = 0);

}  // namespace mgbp
