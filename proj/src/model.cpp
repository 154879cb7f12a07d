#include "scribble/model.hpp"

#include <cmath>

#include "scribble/error.hpp"
#include "scribble/ops.hpp"

namespace scribble::model {

void ModelConfig::validate() const {
    if (depth < 1) throw ConfigError("model depth must be >= 1, got " + std::to_string(depth));
    if (depth > 8) throw ConfigError("model depth must be <= 8, got " + std::to_string(depth));
    if (base_channels < 2) throw ConfigError("base_channels must be >= 2, got " + std::to_string(base_channels));
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1, got " + std::to_string(input_channels));
}

int ModelConfig::channels(int level) const { return base_channels << level; }

int ModelConfig::decoder_channels(int level) const { return channels(std::max(level - 1, 0)); }

std::size_t expected_param_count(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t total = 0;
    std::size_t in = cfg.input_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        const std::size_t c = cfg.channels(l);
        total += in * c * 9 + c;
        in = c;
    }
    for (int l = cfg.depth - 1; l >= 0; --l) {
        // upsampled features and the skip both carry channels(l)
        const std::size_t c = cfg.channels(l), o = cfg.decoder_channels(l);
        total += 2 * c * o * 9 + o;
        if (cfg.scse_enabled) {
            const std::size_t r = o / 2;
            total += 2 * o * r + r + o + (o + 1);
        }
    }
    total += 2 * cfg.channels(0) + 2;
    return total;
}

void ModelParams::declare(const std::string& name, const Shape& shape) {
    if (index_.count(name)) throw ArgumentError("parameter '" + name + "' declared twice");
    index_[name] = entries_.size();
    entries_.push_back({name, shape, Grid(shape, 0.0)});
}

std::size_t ModelParams::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

std::vector<std::string> ModelParams::shape_violations() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.value.shape() != e.declared) out.push_back(e.name + ": declared " + to_string(e.declared) + ", holds " + to_string(e.value.shape()));
    return out;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        const auto& x = a.entries_[i];
        const auto& y = b.entries_[i];
        if (x.name != y.name || x.declared != y.declared || !(x.value == y.value)) return false;
    }
    return true;
}

namespace {

void declare_conv(ModelParams& p, const std::string& name, int out, int in, int k) {
    p.declare(name + ".weight", {out, in, k, k});
    p.declare(name + ".bias", {out});
}

bool is_bias(const std::string& name) { return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0; }

}  // namespace

ModelParams declare_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    int in = cfg.input_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        declare_conv(p, "enc" + std::to_string(l), cfg.channels(l), in, 3);
        in = cfg.channels(l);
    }
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const int o = cfg.decoder_channels(l);
        const std::string dec = "dec" + std::to_string(l);
        declare_conv(p, dec, o, 2 * cfg.channels(l), 3);
        if (cfg.scse_enabled) {
            p.declare(dec + ".scse.fc1.weight", {o / 2, o});
            p.declare(dec + ".scse.fc1.bias", {o / 2});
            p.declare(dec + ".scse.fc2.weight", {o, o / 2});
            p.declare(dec + ".scse.fc2.bias", {o});
            declare_conv(p, dec + ".scse.spatial", 1, o, 1);
        }
    }
    declare_conv(p, "head", 2, cfg.channels(0), 1);
    return p;
}

ModelParams init_params(const ModelConfig& cfg, RngState rng) {
    ModelParams p = declare_params(cfg);
    for (auto& e : p.entries()) {
        if (is_bias(e.name)) continue;
        // fan-in: every axis but the first (conv O x I x k x k, dense O x I)
        std::size_t fan_in = 1;
        for (std::size_t a = 1; a < e.declared.size(); ++a) fan_in *= e.declared[a];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : e.value.values()) v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
    }
    return p;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool trainable) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& e : params.entries()) vars_.push_back(trainable ? tape.variable(e.value) : tape.constant(e.value));
}

BoundParams::BoundParams(const ModelParams& params, std::vector<Var> vars) : params_(&params), vars_(std::move(vars)) {
    if (vars_.size() != params.size()) {
        throw ArgumentError("binding " + std::to_string(vars_.size()) + " vars to " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < vars_.size(); ++i)
        if (vars_[i].shape() != params.entries()[i].declared) {
            throw ShapeError("binding " + params.entries()[i].name + ": expected " + to_string(params.entries()[i].declared) + ", got " +
                             to_string(vars_[i].shape()));
        }
}

namespace {

Var conv(const BoundParams& p, const std::string& name, Var x, int padding) {
    return ops::add_channel_bias(ops::conv2d(x, p[name + ".weight"], 1, padding), p[name + ".bias"]);
}

Var dense(const BoundParams& p, const std::string& name, Var column) {
    Var w = p[name + ".weight"];
    Var b = p[name + ".bias"];
    return ops::add(ops::matmul(w, column), ops::reshape(b, {b.shape()[0], 1}));
}

}  // namespace

Var scse(const BoundParams& p, const std::string& prefix, Var x) {
    const Grid& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("scse: expected C x H x W features, got " + to_string(xv.shape()));
    const int C = xv.dim(0);

    Var squeeze = ops::reshape(ops::global_avg_pool(x), {C, 1});
    Var hidden = ops::relu(dense(p, prefix + ".fc1", squeeze));
    Var channel_gate = ops::reshape(ops::sigmoid(dense(p, prefix + ".fc2", hidden)), {C});
    Var spatial_gate = ops::sigmoid(conv(p, prefix + ".spatial", x, 0));

    return ops::maximum(ops::scale_channels(x, channel_gate), ops::scale_pixels(x, spatial_gate));
}

Var forward(const ModelConfig& cfg, const BoundParams& p, Var image) {
    const Grid& img = image.value();
    if (img.rank() != 3) throw ShapeError("forward: expected C x H x W image, got " + to_string(img.shape()));
    const int H = img.dim(1), W = img.dim(2);
    if (H % cfg.divisor() || W % cfg.divisor() || H == 0 || W == 0) {
        throw ShapeError("forward: spatial extents " + std::to_string(H) + "x" + std::to_string(W) + " must be divisible by 2^depth = " +
                         std::to_string(cfg.divisor()));
    }

    std::vector<Var> skips;
    Var x = image;
    for (int l = 0; l < cfg.depth; ++l) {
        x = ops::relu(conv(p, "enc" + std::to_string(l), x, 1));
        skips.push_back(x);
        x = ops::max_pool2(x);
    }
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const std::string dec = "dec" + std::to_string(l);
        x = ops::concat_channels({ops::upsample2(x), skips[l]});
        x = ops::relu(conv(p, dec, x, 1));
        if (cfg.scse_enabled) x = scse(p, dec + ".scse", x);
    }
    return ops::softmax_channels(conv(p, "head", x, 0));
}

Grid predict(const ModelConfig& cfg, const ModelParams& params, const Grid& image) {
    Tape tape;
    BoundParams bound(tape, params, false);
    return forward(cfg, bound, tape.constant(image)).value();
}

Grid predict_padded(const ModelConfig& cfg, const ModelParams& params, const Grid& image) {
    if (image.rank() != 3) throw ShapeError("predict: expected C x H x W image, got " + to_string(image.shape()));
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const int d = cfg.divisor();
    const int Hp = (H + d - 1) / d * d, Wp = (W + d - 1) / d * d;
    if (Hp == H && Wp == W) return predict(cfg, params, image);
    if (Hp - H >= H || Wp - W >= W) {
        throw ShapeError("predict: image " + std::to_string(H) + "x" + std::to_string(W) + " is too small to reflect-pad to a multiple of " +
                         std::to_string(d));
    }
    // reflection without repeating the edge pixel: index H maps to H - 2
    auto reflect = [](int k, int n) { return k < n ? k : 2 * (n - 1) - k; };
    Grid padded(Shape{C, Hp, Wp});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < Hp; ++i)
            for (int j = 0; j < Wp; ++j) padded.at(c, i, j) = image.at(c, reflect(i, H), reflect(j, W));
    Grid full = predict(cfg, params, padded);
    Grid out(Shape{2, H, W});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) out.at(c, i, j) = full.at(c, i, j);
    return out;
}

}  // namespace scribble::model
