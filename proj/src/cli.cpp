#include "scribble/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>

#include "scribble/config.hpp"
#include "scribble/data_io.hpp"
#include "scribble/deform.hpp"
#include "scribble/error.hpp"
#include "scribble/gradient_suite.hpp"
#include "scribble/metrics.hpp"
#include "scribble/model.hpp"
#include "scribble/training.hpp"

namespace scribble::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;

// Error messages go on one line so callers can split on tabs.
std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\t', ' ');
    return s;
}

struct TrainArgs {
    std::string config;
    double scale = 1.0;
    std::string out;
    bool resume = false;
    bool quiet = false;
};

int run_train(const TrainArgs& a, std::ostream& out) {
    CliConfig cfg = load_config(a.config);
    if (cfg.data.empty()) throw ConfigError(a.config + ": 'data' (dataset manifest) is required for training");
    cfg.train = cfg.train.scaled(a.scale);
    if (!a.out.empty()) cfg.out = a.out;
    PrecisionScope scope(cfg.precision);
    const auto dataset = data::load_dataset(cfg.data);
    fs::create_directories(cfg.out);
    {
        std::ofstream os(cfg.out / "config.txt");
        os << format_config(cfg);
    }
    training::RunOptions opt;
    opt.out_dir = cfg.out;
    opt.resume = a.resume;
    if (!a.quiet) {
        out << training::log_header() << '\n';
        opt.on_epoch = [&out](const training::EpochRow& r) { out << training::format_row(r) << std::endl; };
    }
    const auto res = training::run_training(cfg.train, dataset, opt);
    out << "checkpoint\t" << (cfg.out / "final.ckpt").string() << "\tepochs\t" << res.state.epochs_done << '\n';
    return 0;
}

struct InferArgs {
    std::string checkpoint, image, out;
    double threshold = 0.5;
};

int run_infer(const InferArgs& a) {
    if (!(a.threshold >= 0.0 && a.threshold <= 1.0)) throw ArgumentError("threshold must be in [0, 1]");
    const model::ModelParams params = model::load_checkpoint(a.checkpoint);
    const model::ModelConfig cfg = model::infer_config(params);
    model::check_compatible(cfg, params);
    const Grid image = data::raster_to_grid(data::read_raster(a.image));
    if (image.dim(0) != cfg.input_channels) {
        throw ShapeError(a.image + " has " + std::to_string(image.dim(0)) + " channels, checkpoint expects " + std::to_string(cfg.input_channels));
    }
    PrecisionScope scope(Precision::f32);
    const Grid prob = model::predict_padded(cfg, params, image);
    const int H = image.dim(1), W = image.dim(2);
    Grid mask(Shape{H, W});
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = prob[k] >= a.threshold ? 1.0 : 0.0;  // ties go to target
    data::write_raster(a.out, data::mask_to_raster(mask));
    return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, double beta2, std::ostream& out) {
    const auto rows = eval::evaluate_dirs(pred_dir, gt_dir, beta2);
    out << eval::metrics_header() << '\n';
    for (const auto& r : rows) out << eval::format_metrics(r) << '\n';
    out << eval::format_metrics(eval::mean_row(rows)) << '\n';
    return 0;
}

struct WarpArgs {
    std::string image, out, validity;
    double alpha = 0.3, beta = 0.7;
    std::uint64_t seed = 0;
};

int run_warp(const WarpArgs& a) {
    const Grid image = data::raster_to_grid(data::read_raster(a.image));
    PrecisionScope scope(Precision::f64);
    const deform::DeformationSpec spec{a.alpha, a.beta, RngState(a.seed), deform::kDefaultRegularization};
    const deform::DeformResult r = deform::deform(image, spec);
    data::write_raster(a.out, data::grid_to_raster(r.output));
    if (!a.validity.empty()) data::write_raster(a.validity, data::mask_to_raster(r.validity));
    return 0;
}

int run_gradcheck(int trials, std::uint64_t seed, std::ostream& out, std::ostream& err) {
    if (trials < 1) throw ArgumentError("--trials must be >= 1");
    out << "name\tgroup\ttrials\tmax_rel_error\tseconds\n";
    std::vector<std::string> failed;
    double total = 0.0;
    run_gradient_suite(trials, seed, [&](const GradSuiteRow& r) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e\t%.2f", r.max_rel_error, r.seconds);
        out << r.name << '\t' << r.group << '\t' << r.trials << '\t' << buf << std::endl;
        total += r.seconds;
        if (!(r.max_rel_error < kGradTolerance)) failed.push_back(r.name);
    });
    out << "total_seconds\t" << total << '\n';
    if (failed.empty()) return 0;
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ",") + f;
    err << "error\tnumeric\tgradcheck above " << kGradTolerance << ": " << names << '\n';
    return 1;
}

struct SynthArgs {
    int count = 0, size = 32, channels = 3;
    std::uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
    data::SynthConfig cfg;
    cfg.size = a.size;
    cfg.channels = a.channels;
    const auto entries = data::generate_synthetic(a.count, cfg, RngState(a.seed), a.out);
    out << "manifest\t" << (fs::path(a.out) / "manifest.tsv").string() << "\tscenes\t" << entries.size() << '\n';
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Scribble-supervised target extraction: training, inference and evaluation", "scribble"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Two-stage training from a config file");
    train_cmd->add_option("--config", train.config, "Config file (key = value)")->required();
    train_cmd->add_option("--scale", train.scale, "Multiply both epoch counts")->check(CLI::PositiveNumber);
    train_cmd->add_option("--out", train.out, "Output directory (overrides the config's 'out')");
    train_cmd->add_flag("--resume", train.resume, "Continue from <out>/train_state.bin if present");
    train_cmd->add_flag("--quiet", train.quiet, "Do not print per-epoch rows");

    InferArgs infer;
    auto* infer_cmd = app.add_subcommand("infer", "Binary mask for one image");
    infer_cmd->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required();
    infer_cmd->add_option("--image", infer.image, "Input image (PNM or PNG)")->required();
    infer_cmd->add_option("--out", infer.out, "Output mask, 255 = target")->required();
    infer_cmd->add_option("--threshold", infer.threshold, "Target if probability >= threshold");

    std::string pred_dir, gt_dir;
    double beta2 = eval::kDefaultBeta2;
    auto* eval_cmd = app.add_subcommand("eval", "Precision, recall and F-measure per image and on average");
    eval_cmd->add_option("--pred-dir", pred_dir, "Predicted masks")->required();
    eval_cmd->add_option("--gt-dir", gt_dir, "Ground-truth masks, matched by file stem")->required();
    eval_cmd->add_option("--beta2", beta2, "F-measure weight beta^2")->check(CLI::PositiveNumber);

    WarpArgs warp;
    auto* warp_cmd = app.add_subcommand("warp", "Random thin-plate-spline deformation of an image");
    warp_cmd->add_option("--image", warp.image, "Input image")->required();
    warp_cmd->add_option("--alpha", warp.alpha, "Control point spacing")->required();
    warp_cmd->add_option("--beta", warp.beta, "Jitter half-range")->required();
    warp_cmd->add_option("--seed", warp.seed, "Random seed")->required();
    warp_cmd->add_option("--out", warp.out, "Output image")->required();
    warp_cmd->add_option("--validity", warp.validity, "Also write the validity mask here");

    int trials = 20;
    std::uint64_t grad_seed = 1;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and loss");
    grad_cmd->add_option("--trials", trials, "Random instances per case");
    grad_cmd->add_option("--seed", grad_seed, "Random seed");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with a manifest");
    synth_cmd->add_option("--count", synth.count, "Number of scenes")->required();
    synth_cmd->add_option("--size", synth.size, "Scene side length in pixels")->required();
    synth_cmd->add_option("--seed", synth.seed, "Random seed")->required();
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--channels", synth.channels, "1 or 3");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << app.help();
        err << "error\tusage\t" << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (*train_cmd) return run_train(train, out);
        if (*infer_cmd) return run_infer(infer);
        if (*eval_cmd) return run_eval(pred_dir, gt_dir, beta2, out);
        if (*warp_cmd) return run_warp(warp);
        if (*grad_cmd) return run_gradcheck(trials, grad_seed, out, err);
        if (*synth_cmd) return run_synth(synth, out);
    } catch (const Error& e) {
        err << "error\t" << e.kind() << '\t' << one_line(e.what()) << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        err << "error\tio\t" << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error\tinternal\t" << one_line(e.what()) << '\n';
        return 1;
    }
    return 2;
}

}  // namespace scribble::cli
