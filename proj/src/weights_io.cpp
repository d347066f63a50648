#include "mgbp/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mgbp {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

class Writer {
  public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
        if (!out_) throw WeightFileError("cannot open " + path.string() + " for writing");
    }
    template <typename I>
    void integer(I v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void text(const std::string& s) {
        integer(static_cast<uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void raw(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void finish(const std::filesystem::path& path) {
        out_.flush();
        if (!out_) throw WeightFileError("write to " + path.string() + " failed");
    }

  private:
    std::ofstream out_;
};

class Reader {
  public:
    explicit Reader(const std::filesystem::path& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw WeightFileError("cannot open " + path.string());
        bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    void raw(void* p, size_t n) {
        if (n > bytes_.size() - pos_) throw WeightFileError(path_.string() + ": truncated file");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    template <typename I>
    I integer() {
        I v;
        raw(&v, sizeof v);
        return v;
    }
    std::string text(uint32_t limit) {
        const auto n = integer<uint32_t>();
        if (n > limit) throw WeightFileError(path_.string() + ": implausible string length " + std::to_string(n));
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
    std::vector<char> bytes_;
    size_t pos_ = 0;
};

WeightBlock block(std::string name, const Tensor& t) {
    return {std::move(name), t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

Tensor tensor_of(const WeightBlock& b) {
    return Tensor(b.shape, b.data);
}

}  // namespace

int64_t WeightFile::header_bytes() const {
    int64_t n = sizeof kMagic + 4 + 4 + static_cast<int64_t>(descriptor.size()) + 4;
    for (const auto& b : blocks) n += 4 + static_cast<int64_t>(b.name.size()) + 4 + 4 * 8 + 8;
    return n;
}

void write_weight_file(const std::filesystem::path& path, const WeightFile& file) {
    Writer w(path);
    w.raw(WeightFile::kMagic, sizeof WeightFile::kMagic);
    w.integer(WeightFile::kVersion);
    w.text(file.descriptor);
    w.integer(static_cast<uint32_t>(file.blocks.size()));
    for (const auto& b : file.blocks) {
        if (static_cast<int64_t>(b.data.size()) != b.shape.numel()) {
            throw WeightFileError("block " + b.name + " holds " + std::to_string(b.data.size()) + " values for shape " +
                                  b.shape.str());
        }
        w.text(b.name);
        w.integer(uint32_t{4});
        for (int64_t d : {b.shape.n, b.shape.c, b.shape.h, b.shape.w}) w.integer(d);
        w.integer(static_cast<uint64_t>(b.data.size() * sizeof(float)));
        w.raw(b.data.data(), b.data.size() * sizeof(float));
    }
    w.finish(path);
}

WeightFile read_weight_file(const std::filesystem::path& path) {
    Reader r(path);
    char magic[sizeof WeightFile::kMagic];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, WeightFile::kMagic, sizeof magic) != 0) throw WeightFileError(path.string() + ": bad magic");
    const auto version = r.integer<uint32_t>();
    if (version != WeightFile::kVersion) {
        throw WeightFileError(path.string() + ": unsupported version " + std::to_string(version));
    }
    WeightFile f;
    f.descriptor = r.text(1 << 20);
    const auto count = r.integer<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        WeightBlock b;
        b.name = r.text(4096);
        const auto rank = r.integer<uint32_t>();
        if (rank != 4) throw WeightFileError(path.string() + ": block " + b.name + " has rank " + std::to_string(rank));
        int64_t dims[4];
        for (auto& d : dims) {
            d = r.integer<int64_t>();
            if (d < 0 || d > (int64_t{1} << 31)) throw WeightFileError(path.string() + ": bad dimension in " + b.name);
        }
        b.shape = {dims[0], dims[1], dims[2], dims[3]};
        const auto bytes = r.integer<uint64_t>();
        if (bytes != static_cast<uint64_t>(b.shape.numel()) * sizeof(float)) {
            throw WeightFileError(path.string() + ": block " + b.name + " byte length does not match its shape");
        }
        b.data.resize(static_cast<size_t>(b.shape.numel()));
        r.raw(b.data.data(), bytes);
        f.blocks.push_back(std::move(b));
    }
    if (!r.at_end()) throw WeightFileError(path.string() + ": trailing bytes after last block");
    return f;
}

WeightFile generator_file(const NetworkPlan& plan, const GeneratorWeights<float>& weights) {
    weights.validate(plan);
    WeightFile f{plan.descriptor(), {}};
    for (const auto& m : plan.instances) {
        const auto& p = weights.at(m.tag);
        f.blocks.push_back(block(m.tag.str() + ".weight", p.weight));
        f.blocks.push_back(block(m.tag.str() + ".bias", p.bias));
    }
    return f;
}

void save_weights(const std::filesystem::path& path, const NetworkPlan& plan, const GeneratorWeights<float>& weights) {
    write_weight_file(path, generator_file(plan, weights));
}

std::pair<NetworkPlan, GeneratorWeights<float>> load_weights(const std::filesystem::path& path) {
    const auto f = read_weight_file(path);
    NetworkPlan plan;
    try {
        plan = NetworkPlan::from_descriptor(f.descriptor);
    } catch (const std::exception& e) {
        throw WeightFileError(path.string() + ": " + e.what());
    }
    std::map<std::string, const WeightBlock*> by_name;
    for (const auto& b : f.blocks) by_name[b.name] = &b;
    if (by_name.size() != 2 * plan.instances.size() || f.blocks.size() != by_name.size()) {
        throw WeightFileError(path.string() + ": tag set mismatch (" + std::to_string(f.blocks.size()) +
                              " blocks for " + std::to_string(plan.instances.size()) + " modules)");
    }
    GeneratorWeights<float> w;
    for (const auto& m : plan.instances) {
        const auto wi = by_name.find(m.tag.str() + ".weight");
        const auto bi = by_name.find(m.tag.str() + ".bias");
        if (wi == by_name.end() || bi == by_name.end()) {
            throw WeightFileError(path.string() + ": tag set mismatch, missing " + m.tag.str());
        }
        w.add(m.tag, {tensor_of(*wi->second), tensor_of(*bi->second)});
    }
    try {
        w.validate(plan);
    } catch (const std::exception& e) {
        throw WeightFileError(path.string() + ": " + e.what());
    }
    return {std::move(plan), std::move(w)};
}

namespace {

std::string disc_descriptor(const DiscriminatorConfig& cfg) {
    std::ostringstream os;
    os << "discriminator=1\nwidths=";
    for (size_t i = 0; i < cfg.widths.size(); ++i) os << (i ? "," : "") << cfg.widths[i];
    os << "\nlayers=" << cfg.layers << "\nkernel=" << cfg.kernel << "\n";
    return os.str();
}

DiscriminatorConfig parse_disc_descriptor(const std::string& text, const std::filesystem::path& path) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (kv["discriminator"] != "1" || !kv.count("widths") || !kv.count("layers") || !kv.count("kernel")) {
        throw WeightFileError(path.string() + ": not a discriminator file");
    }
    DiscriminatorConfig cfg;
    cfg.widths.clear();
    std::istringstream ws(kv["widths"]);
    for (std::string s; std::getline(ws, s, ',');) cfg.widths.push_back(std::stoll(s));
    cfg.layers = std::stoll(kv["layers"]);
    cfg.kernel = std::stoll(kv["kernel"]);
    return cfg;
}

}  // namespace

void save_discriminator(const std::filesystem::path& path, const DiscriminatorWeights<float>& weights) {
    weights.validate();
    WeightFile f{disc_descriptor(weights.config), {}};
    auto copy = weights.clone();
    const auto names = copy.parameter_names();
    const auto params = copy.parameters();
    for (size_t i = 0; i < params.size(); ++i) f.blocks.push_back(block(names[i], *params[i]));
    write_weight_file(path, f);
}

DiscriminatorWeights<float> load_discriminator(const std::filesystem::path& path) {
    const auto f = read_weight_file(path);
    auto w = DiscriminatorWeights<float>::zeros(parse_disc_descriptor(f.descriptor, path));
    const auto names = w.parameter_names();
    const auto params = w.parameters();
    if (f.blocks.size() != params.size()) throw WeightFileError(path.string() + ": tag set mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (f.blocks[i].name != names[i] || f.blocks[i].shape != params[i]->shape()) {
            throw WeightFileError(path.string() + ": unexpected block " + f.blocks[i].name);
        }
        *params[i] = tensor_of(f.blocks[i]);
    }
    w.validate();
    return w;
}

}  // namespace mgbp
