#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scribble/data_io.hpp"
#include "scribble/losses.hpp"
#include "scribble/model.hpp"

namespace scribble::training {

enum class DecayMode {
    weight,  // decoupled weight decay: theta *= 1 - lr * decay
    linear,  // learning rate lr * max(0, 1 - decay * step), no weight decay
};

struct TrainConfig {
    int stage1_epochs = 500;
    int stage2_epochs = 500;
    int batch_size = 16;
    double learning_rate = 3e-4;
    double decay = 5e-5;
    DecayMode decay_mode = DecayMode::weight;
    int crop_size = 256;
    double alpha = 0.3;
    double beta = 0.7;
    std::uint64_t seed = 0;
    double pseudo_threshold = 0.8;
    double ema_momentum = 0.9;
    // Checkpoint every N epochs (0: only the final one).
    int checkpoint_every = 0;
    model::ModelConfig model;
    losses::LossConfig loss;  // enable_pseudo is ignored; stage 2 turns it on

    void validate() const;
    // Epoch counts multiplied by `scale`, rounded, at least 1 for stage 1.
    TrainConfig scaled(double scale) const;
};

struct OptimizerState {
    std::vector<Grid> m;
    std::vector<Grid> v;
    long step = 0;
};

OptimizerState make_optimizer(const model::ModelParams& params);

using ParamGrads = std::map<std::string, Grid>;

struct RadamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One RAdam update in place. Throws ArgumentError naming any parameter without
// a gradient, ShapeError on shape disagreement.
void radam_step(model::ModelParams& params, const ParamGrads& grads, OptimizerState& state, double lr, double decay,
                DecayMode mode = DecayMode::weight, const RadamHyper& hyper = {});

struct PseudoState {
    Grid ema;                    // H x W, starts at 0.5
    losses::ScribbleMap labels;  // unknown means IGNORE
};

PseudoState make_pseudo(const data::Sample& sample);
// EMA <- momentum * EMA + (1 - momentum) * prediction, then re-threshold; scribbles win.
void relabel(PseudoState& state, const losses::ScribbleMap& scribble, double threshold);
void update_pseudo(PseudoState& state, const data::Sample& sample, const model::ModelConfig& cfg, const model::ModelParams& params,
                   double threshold, double momentum);

struct EpochRow {
    int epoch = 0;  // 1-based across both stages
    int stage = 1;
    losses::LossReport mean;
};

// Per-epoch state of the whole run; everything needed to continue exactly.
struct RunState {
    model::ModelParams params;
    OptimizerState optimizer;
    std::vector<PseudoState> pseudo;
    int epochs_done = 0;
};

RunState initial_state(const TrainConfig& config, const std::vector<data::Sample>& dataset);

// One epoch: shuffled batches of random crops, mean gradient per batch, one
// RAdam step per batch. `epoch` is 1-based and seeds the epoch's streams.
EpochRow train_epoch(const std::vector<data::Sample>& dataset, RunState& state, const TrainConfig& config, int epoch);

struct RunOptions {
    std::filesystem::path out_dir;
    bool resume = false;  // continue from out_dir/train_state.bin if present
    // Stop after this many epochs in total (for interrupted-run tests); -1 runs to the end.
    int stop_after = -1;
    std::function<void(const EpochRow&)> on_epoch;
};

struct RunResult {
    RunState state;
    std::vector<EpochRow> rows;  // rows produced by this call
};

// Stage 1 then stage 2. Writes train_log.tsv, checkpoints (epoch_NNNN.ckpt and
// final.ckpt) and train_state.bin under out_dir.
RunResult run_training(const TrainConfig& config, const std::vector<data::Sample>& dataset, const RunOptions& options);

std::string log_header();
std::string format_row(const EpochRow& row);

void save_state(const std::filesystem::path& path, const RunState& state);
RunState load_state(const std::filesystem::path& path);

}  // namespace scribble::training
