#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "scribble/error.hpp"
#include "scribble/model.hpp"

namespace scribble::model {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'R', 'B'};

template <class T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::istream& is, const std::filesystem::path& path) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == EOF) throw IoError("truncated checkpoint " + path.string());
        v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, 4);
    put_le<std::uint16_t>(os, kCheckpointVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rank()));
        for (int d : e.value.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (double v : e.value.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a checkpoint (bad magic): " + path.string());
    const auto version = get_le<std::uint16_t>(is, path);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    const auto count = get_le<std::uint32_t>(is, path);
    ModelParams params;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = get_le<std::uint32_t>(is, path);
        if (len > 4096) throw IoError("corrupt entry name length in " + path.string());
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw IoError("truncated checkpoint " + path.string());
        const auto rank = get_le<std::uint32_t>(is, path);
        if (rank > 4) throw IoError("entry '" + name + "' has rank " + std::to_string(rank) + " in " + path.string());
        Shape shape;
        for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(static_cast<int>(get_le<std::uint32_t>(is, path)));
        params.declare(name, shape);
        for (double& v : params.get(name).values()) v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is, path)));
    }
    if (is.peek() != EOF) throw IoError("trailing bytes after last entry in " + path.string());
    return params;
}

ModelConfig infer_config(const ModelParams& params) {
    if (!params.contains("enc0.weight")) throw ShapeError("checkpoint has no 'enc0.weight' entry");
    const Shape& enc0 = params.get("enc0.weight").shape();
    if (enc0.size() != 4) throw ShapeError("enc0.weight must be rank 4, got " + to_string(enc0));
    ModelConfig cfg;
    cfg.base_channels = enc0[0];
    cfg.input_channels = enc0[1];
    int levels = 0;
    while (params.contains("enc" + std::to_string(levels) + ".weight")) ++levels;
    cfg.depth = levels;
    cfg.scse_enabled = params.contains("dec0.scse.fc1.weight");
    cfg.validate();
    return cfg;
}

void check_compatible(const ModelConfig& config, const ModelParams& params) {
    const ModelParams expected = declare_params(config);
    std::vector<std::string> problems;
    std::set<std::string> seen;
    for (const auto& e : expected.entries()) {
        seen.insert(e.name);
        if (!params.contains(e.name)) {
            problems.push_back(e.name + ": missing");
            continue;
        }
        const Shape& got = params.get(e.name).shape();
        if (got != e.declared) problems.push_back(e.name + ": expected " + to_string(e.declared) + ", got " + to_string(got));
    }
    for (const auto& e : params.entries())
        if (!seen.count(e.name)) problems.push_back(e.name + ": unexpected");
    if (!problems.empty()) {
        std::ostringstream os;
        os << "checkpoint does not match model:";
        for (const auto& p : problems) os << ' ' << p << ';';
        throw ShapeError(os.str());
    }
}

}  // namespace scribble::model
