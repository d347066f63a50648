#include "mgbp/plan.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mgbp {

namespace {

ConvSpec analysis_spec(const NetworkPlan& p, int level) {
    const int64_t stride = int64_t{1} << (p.levels - level);
    ConvSpec s;
    s.in_channels = p.input_channels();
    s.out_channels = p.feature_schedule[level - 1];
    s.stride = stride;
    if (stride > 1) {
        s.kernel = 2 * stride;
        s.padding = stride / 2;
        s.ceil_mode = true;
    } else {
        s.kernel = p.filter_size;
        s.padding = (p.filter_size - 1) / 2;
    }
    return s;
}

ConvSpec downscale_spec(const NetworkPlan& p, int level) {
    ConvSpec s;
    s.in_channels = p.feature_schedule[level - 1];
    s.out_channels = p.feature_schedule[level - 2];
    s.kernel = p.filter_size + 1;
    s.stride = 2;
    s.padding = (p.filter_size - 1) / 2;
    s.ceil_mode = true;
    return s;
}

ConvSpec upscale_spec(const NetworkPlan& p, int level) {
    ConvSpec s;
    s.in_channels = 2 * p.feature_schedule[level - 2];
    s.out_channels = p.feature_schedule[level - 1];
    s.kernel = p.filter_size + 1;
    s.stride = 2;
    s.padding = p.filter_size / 2;
    s.transposed = true;
    return s;
}

ConvSpec synthesis_spec(const NetworkPlan& p) {
    ConvSpec s;
    s.in_channels = p.feature_schedule.back();
    s.out_channels = 3;
    s.kernel = p.filter_size;
    s.padding = (p.filter_size - 1) / 2;
    return s;
}

void unfold_bp(NetworkPlan& plan, int level, std::vector<int>& path) {
    if (level <= 1) return;
    for (int step = 1; step <= plan.mu; ++step) {
        path.push_back(step);
        plan.instances.push_back({{ModuleKind::downscale, level, path}, downscale_spec(plan, level)});
        unfold_bp(plan, level - 1, path);
        plan.instances.push_back({{ModuleKind::upscale, level, path}, upscale_spec(plan, level)});
        path.pop_back();
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) out.push_back(item);
    return out;
}

}  // namespace

const char* to_string(ModuleKind kind) {
    switch (kind) {
        case ModuleKind::analysis: return "analysis";
        case ModuleKind::downscale: return "down";
        case ModuleKind::upscale: return "up";
        case ModuleKind::synthesis: return "synthesis";
    }
    return "?";
}

std::string ModuleTag::str() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == ModuleKind::synthesis) return os.str();
    os << "." << level;
    if (!path.empty()) {
        os << ".";
        for (size_t i = 0; i < path.size(); ++i) os << (i ? "-" : "") << path[i];
    }
    return os.str();
}

ModuleTag ModuleTag::parse(const std::string& text) {
    const auto parts = split(text, '.');
    if (parts.empty()) throw std::invalid_argument("empty module tag");
    ModuleTag tag;
    if (parts[0] == "synthesis" && parts.size() == 1) {
        tag.kind = ModuleKind::synthesis;
        return tag;
    }
    if (parts[0] == "analysis" && parts.size() == 2) {
        tag.kind = ModuleKind::analysis;
    } else if ((parts[0] == "down" || parts[0] == "up") && parts.size() == 3) {
        tag.kind = parts[0] == "down" ? ModuleKind::downscale : ModuleKind::upscale;
        for (const auto& s : split(parts[2], '-')) tag.path.push_back(std::stoi(s));
    } else {
        throw std::invalid_argument("malformed module tag '" + text + "'");
    }
    tag.level = std::stoi(parts[1]);
    return tag;
}

int64_t NetworkPlan::count(ModuleKind kind) const {
    return std::count_if(instances.begin(), instances.end(),
                         [kind](const ModuleInstance& m) { return m.tag.kind == kind; });
}

int64_t NetworkPlan::parameter_count() const {
    int64_t total = 0;
    for (const auto& m : instances) total += m.conv.parameter_count();
    return total;
}

std::optional<size_t> NetworkPlan::find(const ModuleTag& tag) const {
    for (size_t i = 0; i < instances.size(); ++i) {
        if (instances[i].tag == tag) return i;
    }
    return std::nullopt;
}

int64_t NetworkPlan::min_input_size() const { return (int64_t{1} << (levels - 1)) * 4; }

std::string NetworkPlan::descriptor() const {
    std::ostringstream os;
    os << "mu=" << mu << "\nlevels=" << levels << "\nschedule=";
    for (size_t i = 0; i < feature_schedule.size(); ++i) os << (i ? "," : "") << feature_schedule[i];
    os << "\nfilter_size=" << filter_size << "\nnoise_channels=" << noise_channels << "\n";
    return os.str();
}

NetworkPlan NetworkPlan::from_descriptor(const std::string& text) {
    std::map<std::string, std::string> kv;
    for (const auto& line : split(text, '\n')) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("bad plan descriptor line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"mu", "levels", "schedule", "filter_size"}) {
        if (!kv.count(key)) throw std::invalid_argument(std::string("plan descriptor lacks '") + key + "'");
    }
    std::vector<int64_t> schedule;
    for (const auto& s : split(kv["schedule"], ',')) schedule.push_back(std::stoll(s));
    NetworkPlan plan = unfold(std::stoi(kv["mu"]), std::stoi(kv["levels"]), schedule, std::stoi(kv["filter_size"]));
    if (kv.count("noise_channels") && std::stoi(kv["noise_channels"]) != plan.noise_channels) {
        throw std::invalid_argument("unsupported noise channel count " + kv["noise_channels"]);
    }
    return plan;
}

bool operator==(const NetworkPlan& a, const NetworkPlan& b) {
    if (a.mu != b.mu || a.levels != b.levels || a.feature_schedule != b.feature_schedule ||
        a.filter_size != b.filter_size || a.noise_channels != b.noise_channels ||
        a.instances.size() != b.instances.size()) {
        return false;
    }
    for (size_t i = 0; i < a.instances.size(); ++i) {
        if (a.instances[i].tag != b.instances[i].tag || !(a.instances[i].conv == b.instances[i].conv)) return false;
    }
    return true;
}

NetworkPlan unfold(int mu, int levels, const std::vector<int64_t>& feature_schedule, int filter_size) {
    if (mu < 1) throw std::invalid_argument("mu must be >= 1");
    if (levels < 1) throw std::invalid_argument("levels must be >= 1");
    if (static_cast<int>(feature_schedule.size()) != levels) {
        throw std::invalid_argument("feature schedule has " + std::to_string(feature_schedule.size()) +
                                    " entries for " + std::to_string(levels) + " levels");
    }
    if (filter_size < 1 || filter_size % 2 == 0) {
        throw std::invalid_argument("filter size must be odd, got " + std::to_string(filter_size));
    }
    if (std::any_of(feature_schedule.begin(), feature_schedule.end(), [](int64_t w) { return w < 1; })) {
        throw std::invalid_argument("feature counts must be >= 1");
    }
    NetworkPlan plan;
    plan.mu = mu;
    plan.levels = levels;
    plan.feature_schedule = feature_schedule;
    plan.filter_size = filter_size;
    for (int k = 1; k <= levels; ++k) {
        plan.instances.push_back({{ModuleKind::analysis, k, {}}, analysis_spec(plan, k)});
    }
    std::vector<int> path;
    unfold_bp(plan, levels, path);
    plan.instances.push_back({{ModuleKind::synthesis, 0, {}}, synthesis_spec(plan)});
    return plan;
}

NetworkPlan default_plan(int filter_size) { return unfold(2, 6, {256, 192, 128, 92, 48, 9}, filter_size); }

NetworkPlan desk_plan(int filter_size) { return unfold(2, 4, {32, 24, 16, 8}, filter_size); }

int64_t bp_module_count(int mu, int levels) {
    int64_t total = 0;
    for (int k = 2; k <= levels; ++k) {
        int64_t term = 1;
        for (int i = 0; i < levels - k + 1; ++i) term *= mu;
        total += term;
    }
    return total;
}

int64_t level_size(const NetworkPlan& plan, int level, int64_t size) {
    const int64_t div = int64_t{1} << (plan.levels - level);
    return (size + div - 1) / div;
}

std::vector<InstanceShapes> trace_shapes(const NetworkPlan& plan, int64_t height, int64_t width) {
    std::vector<InstanceShapes> shapes;
    shapes.reserve(plan.instances.size());
    const Shape input{1, plan.input_channels(), height, width};
    std::vector<Shape> analysis(static_cast<size_t>(plan.levels) + 1);
    // Back-projection state: one "out" shape per active recursion depth.
    std::vector<Shape> stack;
    auto conv_out = [](const ConvSpec& c, const Shape& in) {
        if (in.c != c.in_channels) {
            throw ShapeError("plan replay: expected " + std::to_string(c.in_channels) + " channels, got " + in.str());
        }
        return Shape{in.n, c.out_channels, c.output_size(in.h), c.output_size(in.w)};
    };
    for (const auto& m : plan.instances) {
        const int k = m.tag.level;
        switch (m.tag.kind) {
            case ModuleKind::analysis: {
                const Shape out = conv_out(m.conv, input);
                analysis[k] = out;
                shapes.push_back({input, out});
                if (k == plan.levels) stack.push_back(out);
                break;
            }
            case ModuleKind::downscale: {
                if (stack.empty()) throw ShapeError("plan replay: downscale before analysis");
                const Shape out = conv_out(m.conv, stack.back());
                if (out.h != analysis[k - 1].h || out.w != analysis[k - 1].w) {
                    throw ShapeError("plan replay: " + m.tag.str() + " output " + out.str() +
                                     " does not match level " + std::to_string(k - 1));
                }
                shapes.push_back({stack.back(), out});
                stack.push_back(out);
                break;
            }
            case ModuleKind::upscale: {
                if (stack.size() < 2) throw ShapeError("plan replay: unmatched " + m.tag.str());
                const Shape coarse = stack.back();
                stack.pop_back();
                const Shape in{1, analysis[k - 1].c + coarse.c, coarse.h, coarse.w};
                const Shape out = conv_out(m.conv, in);
                const Shape& partner = stack.back();
                if (out.h < partner.h || out.w < partner.w || out.c != partner.c) {
                    throw ShapeError("plan replay: " + m.tag.str() + " output " + out.str() +
                                     " cannot be cropped to " + partner.str());
                }
                shapes.push_back({in, out});
                break;
            }
            case ModuleKind::synthesis: {
                if (stack.size() != 1) throw ShapeError("plan replay: synthesis with open recursion");
                shapes.push_back({stack.back(), conv_out(m.conv, stack.back())});
                break;
            }
        }
    }
    return shapes;
}

int64_t count_cost(const NetworkPlan& plan, int64_t height, int64_t width) {
    const auto shapes = trace_shapes(plan, height, width);
    int64_t total = 0;
    for (size_t i = 0; i < shapes.size(); ++i) {
        total += plan.instances[i].conv.macs(shapes[i].input.h, shapes[i].input.w);
    }
    return total;
}

std::string describe(const NetworkPlan& plan, int64_t height, int64_t width) {
    std::ostringstream os;
    os << "mu: " << plan.mu << "\nlevels: " << plan.levels << "\nfeature_schedule:";
    for (auto w : plan.feature_schedule) os << " " << w;
    os << "\nfilter_size: " << plan.filter_size << "\nnoise_channels: " << plan.noise_channels << "\n";
    os << "analysis_modules: " << plan.count(ModuleKind::analysis) << "\n";
    os << "downscale_modules: " << plan.count(ModuleKind::downscale) << "\n";
    os << "upscale_modules: " << plan.count(ModuleKind::upscale) << "\n";
    os << "synthesis_modules: " << plan.count(ModuleKind::synthesis) << "\n";
    os << "parameters: " << plan.parameter_count() << "\n";
    if (height > 0 && width > 0) {
        os << "input: " << height << "x" << width << "\nmacs: " << count_cost(plan, height, width) << "\n";
    }
    os << "instances:\n";
    for (const auto& m : plan.instances) {
        const auto& c = m.conv;
        os << "  " << m.tag.str() << " " << (c.transposed ? "convT" : "conv") << " " << c.in_channels << "->"
           << c.out_channels << " k" << c.kernel << " s" << c.stride << " p" << c.padding
           << (c.ceil_mode ? " ceil" : "") << " params " << c.parameter_count() << "\n";
    }
    return os.str();
}

}  // namespace mgbp
