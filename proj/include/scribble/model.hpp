#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scribble/grid.hpp"
#include "scribble/rng.hpp"
#include "scribble/tape.hpp"

namespace scribble::model {

struct ModelConfig {
    int base_channels = 8;
    int depth = 3;
    bool scse_enabled = true;
    int input_channels = 3;

    void validate() const;
    // Encoder width at level l: base * 2^l.
    int channels(int level) const;
    // Decoder level l maps 2 * channels(l) to channels(max(l - 1, 0)).
    int decoder_channels(int level) const;
    int divisor() const { return 1 << depth; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Closed-form parameter count for a config; see docs/model.md.
std::size_t expected_param_count(const ModelConfig& config);

// Ordered registry of named weight grids with their declared shapes.
class ModelParams {
public:
    struct Entry {
        std::string name;
        Shape declared;
        Grid value;
    };

    void declare(const std::string& name, const Shape& shape);

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::vector<Entry>& entries() noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;
    const Grid& get(const std::string& name) const { return entries_[index_of(name)].value; }
    Grid& get(const std::string& name) { return entries_[index_of(name)].value; }

    std::size_t parameter_count() const;
    // Empty when every value matches its declaration; else one line per offending entry.
    std::vector<std::string> shape_violations() const;

    friend bool operator==(const ModelParams& a, const ModelParams& b);

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Registry with every weight declared for `config`, all values zero.
ModelParams declare_params(const ModelConfig& config);

// Fan-in scaled uniform init on [-sqrt(6/fan_in), sqrt(6/fan_in)] for weights,
// zero biases. Values are rounded to binary32 so checkpoints are lossless.
ModelParams init_params(const ModelConfig& config, RngState rng);

// Parameters placed on a tape, in registry order.
class BoundParams {
public:
    BoundParams(Tape& tape, const ModelParams& params, bool trainable = true);
    // Caller-supplied vars, one per registry entry, in registry order.
    BoundParams(const ModelParams& params, std::vector<Var> vars);

    Var operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }
    const std::vector<Var>& vars() const noexcept { return vars_; }
    const ModelParams& params() const noexcept { return *params_; }

private:
    const ModelParams* params_;
    std::vector<Var> vars_;
};

// Concurrent spatial and channel squeeze-and-excitation on C x H x W features.
// `prefix` names the block's weights, e.g. "dec0.scse".
Var scse(const BoundParams& params, const std::string& prefix, Var features);

// 2 x H x W channel-softmax probabilities; channel 0 is the target map.
Var forward(const ModelConfig& config, const BoundParams& params, Var image);

// Convenience: forward on a private tape.
Grid predict(const ModelConfig& config, const ModelParams& params, const Grid& image);
// predict for any extents: reflect-pads bottom/right up to a multiple of
// 2^depth, then crops the output back.
Grid predict_padded(const ModelConfig& config, const ModelParams& params, const Grid& image);

// Binary checkpoint: "SCRB", u16 version, u32 entry count, then per entry
// u32 name length, name bytes, u32 rank, u32 extents, f32 values (all little-endian).
inline constexpr std::uint16_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Recovers the architecture from entry names and shapes.
ModelConfig infer_config(const ModelParams& params);
// Throws ShapeError listing every entry that is missing, unexpected or misshapen.
void check_compatible(const ModelConfig& config, const ModelParams& params);

}  // namespace scribble::model
