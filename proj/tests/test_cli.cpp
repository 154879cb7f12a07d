#include <algorithm>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scribble/cli.hpp"
#include "scribble/config.hpp"
#include "scribble/data_io.hpp"
#include "scribble/error.hpp"
#include "scribble/metrics.hpp"
#include "scribble/model.hpp"
#include "support.hpp"

using namespace scribble;
using namespace scribble::eval;
namespace fs = std::filesystem;

namespace {

Grid random_mask(int h, int w, RngState& rng, double p) {
    Grid g(Shape{h, w});
    for (double& v : g.values()) v = rng.uniform() < p ? 1.0 : 0.0;
    return g;
}

// Confusion matrix by explicit loops over (row, column).
MetricsRow confusion_oracle(const Grid& pred, const Grid& gt, double b2) {
    long tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < gt.dim(0); ++i)
        for (int j = 0; j < gt.dim(1); ++j) {
            if (pred.at(i, j) == 1 && gt.at(i, j) == 1) ++tp;
            if (pred.at(i, j) == 1 && gt.at(i, j) == 0) ++fp;
            if (pred.at(i, j) == 0 && gt.at(i, j) == 1) ++fn;
        }
    MetricsRow r;
    r.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    r.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    r.f_measure = (b2 * r.precision + r.recall) > 0 ? (1 + b2) * r.precision * r.recall / (b2 * r.precision + r.recall) : 0.0;
    return r;
}

struct Run {
    int code;
    std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "scribble");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("metrics examples") {
    Grid gt(Shape{4, 4}, 0.0);
    for (int j = 0; j < 4; ++j) gt.at(1, j) = gt.at(2, j) = 1.0;
    const MetricsRow same = metrics(gt, gt);
    CHECK(same.precision == 1.0);
    CHECK(same.recall == 1.0);
    CHECK(same.f_measure == 1.0);

    Grid half(Shape{4, 4}, 0.0);
    for (int j = 0; j < 4; ++j) half.at(1, j) = 1.0;
    const MetricsRow h = metrics(half, gt, 0.3);
    CHECK(h.precision == 1.0);
    CHECK(h.recall == 0.5);
    CHECK(h.f_measure == doctest::Approx(0.8125).epsilon(1e-15));

    const Grid empty(Shape{4, 4}, 0.0);
    const MetricsRow none = metrics(empty, gt);
    CHECK(none.precision == 0.0);
    CHECK(none.recall == 0.0);
    CHECK(none.f_measure == 0.0);
    CHECK(metrics(empty, empty).f_measure == 0.0);
}

TEST_CASE("metrics match the confusion-matrix loop oracle exactly") {
    RngState rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const Grid a = random_mask(16, 16, rng, rng.uniform()), b = random_mask(16, 16, rng, rng.uniform());
        const double b2 = trial % 2 ? 0.3 : rng.uniform(0.1, 2.0);
        const MetricsRow r = metrics(a, b, b2), o = confusion_oracle(a, b, b2);
        CHECK(r.precision == o.precision);
        CHECK(r.recall == o.recall);
        CHECK(r.f_measure == o.f_measure);
        CHECK(r.f_measure <= 1.0);
        CHECK(r.f_measure >= 0.0);
    }
}

TEST_CASE("dataset mean does not depend on row order") {
    RngState rng(32);
    std::vector<MetricsRow> rows;
    for (int k = 0; k < 37; ++k) rows.push_back(metrics(random_mask(16, 16, rng, 0.4), random_mask(16, 16, rng, 0.3), 0.3, std::to_string(k)));
    const MetricsRow base = mean_row(rows);
    for (int k = 0; k < 10; ++k) {
        for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.below(i)]);
        const MetricsRow m = mean_row(rows);
        CHECK(m.precision == base.precision);
        CHECK(m.recall == base.recall);
        CHECK(m.f_measure == base.f_measure);
    }
    CHECK_THROWS_AS(mean_row({}), ArgumentError);
}

TEST_CASE("metrics input errors") {
    CHECK_THROWS_AS(metrics(Grid(Shape{4, 4}), Grid(Shape{4, 5})), ShapeError);
    Grid soft(Shape{2, 2}, 0.5);
    CHECK_THROWS_WITH_AS(metrics(soft, Grid(Shape{2, 2})), doctest::Contains("not binary"), ArgumentError);
}

TEST_CASE("config parsing") {
    const auto c = cli::parse_config("# desk run\ndata = d/manifest.tsv\nseed = 9  # trailing\n\nlambda_ic=2.5\nenable_dc = false\nprecision = f64\n", "/base");
    CHECK(c.data == fs::path("/base/d/manifest.tsv"));
    CHECK(c.train.seed == 9);
    CHECK(c.train.loss.lambda_ic == 2.5);
    CHECK(!c.train.loss.enable_dc);
    CHECK(c.precision == Precision::f64);
    CHECK(c.train.stage1_epochs == 500);
    CHECK(c.train.crop_size == 256);

    CHECK_THROWS_WITH_AS(cli::parse_config("crop = 32\n"), doctest::Contains("line 1: unknown key 'crop'"), ConfigError);
    CHECK_THROWS_WITH_AS(cli::parse_config("seed = 1\nseed = 2\n"), doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(cli::parse_config("batch_size = four\n"), doctest::Contains("'batch_size'"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config("batch_size = 4.5\n"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config("enable_ac = maybe\n"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config("crop_size = 30\n"), ConfigError);  // not a multiple of 8
}

TEST_CASE("config format round trip covers every key") {
    auto c = cli::parse_config("data = /x/m.tsv\nlearning_rate = 0.000123\ndecay_mode = linear\nscse = false\n");
    const std::string text = cli::format_config(c);
    for (const auto& k : cli::config_keys()) CHECK(text.find(k + " = ") != std::string::npos);
    const auto back = cli::parse_config(text);
    CHECK(back.train.learning_rate == 0.000123);
    CHECK(back.train.decay_mode == training::DecayMode::linear);
    CHECK(!back.train.model.scse_enabled);
    CHECK(cli::format_config(back) == text);
}

TEST_CASE("cli: usage errors exit 2 with usage text") {
    auto r = run_cli({});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    r = run_cli({"synth", "--count", "2", "--bogus"});
    CHECK(r.code == 2);
    CHECK(r.err.find("error\tusage\t") != std::string::npos);
    r = run_cli({"teleport"});
    CHECK(r.code == 2);
}

TEST_CASE("cli: failures print one machine-parsable line") {
    const auto dir = testing::scratch_dir("cli_errors");
    auto r = run_cli({"infer", "--checkpoint", (dir / "none.ckpt").string(), "--image", "x.ppm", "--out", "y.pgm"});
    CHECK(r.code == 1);
    CHECK(r.err.starts_with("error\tio\t"));
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    std::ofstream(dir / "c.txt") << "mystery = 1\n";
    r = run_cli({"train", "--config", (dir / "c.txt").string()});
    CHECK(r.code == 1);
    CHECK(r.err.starts_with("error\tconfig\t"));
}

TEST_CASE("cli: synth, train, infer, eval pipeline") {
    const auto dir = testing::scratch_dir("cli_pipeline");
    REQUIRE(run_cli({"synth", "--count", "8", "--size", "32", "--seed", "7", "--out", (dir / "d").string()}).code == 0);
    std::ofstream(dir / "c.txt") << "data = d/manifest.tsv\nout = run\ncrop_size = 32\nbatch_size = 4\n";
    auto r = run_cli({"train", "--config", (dir / "c.txt").string(), "--scale", "0.02", "--quiet"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "run" / "final.ckpt"));
    CHECK(fs::exists(dir / "run" / "config.txt"));

    fs::create_directories(dir / "pred");
    for (const auto& e : data::read_manifest(dir / "d" / "manifest.tsv")) {
        const auto out = dir / "pred" / (e.id + ".pgm");
        REQUIRE(run_cli({"infer", "--checkpoint", (dir / "run" / "final.ckpt").string(), "--image", e.image.string(), "--out", out.string()}).code == 0);
    }
    r = run_cli({"eval", "--pred-dir", (dir / "pred").string(), "--gt-dir", (dir / "d" / "gt").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.starts_with("id\tprecision\trecall\tf_measure\n"));
    CHECK(r.out.find("\nmean\t") != std::string::npos);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 10);
}

TEST_CASE("cli: infer tie rule, idempotence and padding") {
    const auto dir = testing::scratch_dir("cli_infer");
    const model::ModelConfig cfg{8, 3, true, 3};
    auto params = model::init_params(cfg, RngState(3));
    params.get("head.weight").fill(0.0);
    model::save_checkpoint(dir / "zero.ckpt", params);
    RngState rng(4);
    const Grid img = testing::random_grid({3, 20, 28}, rng, 0, 1);  // not a multiple of 8
    data::write_raster(dir / "img.ppm", data::grid_to_raster(img));
    auto args = std::vector<std::string>{"infer", "--checkpoint", (dir / "zero.ckpt").string(), "--image", (dir / "img.ppm").string(), "--out"};
    auto a = args, b = args;
    a.push_back((dir / "a.pgm").string());
    b.push_back((dir / "b.pgm").string());
    REQUIRE(run_cli(a).code == 0);
    REQUIRE(run_cli(b).code == 0);
    const data::Raster m = data::read_raster(dir / "a.pgm");
    CHECK(m.height == 20);
    CHECK(m.width == 28);
    CHECK(std::all_of(m.pixels.begin(), m.pixels.end(), [](auto v) { return v == 255; }));
    CHECK(slurp(dir / "a.pgm") == slurp(dir / "b.pgm"));
}

TEST_CASE("cli: warp with zero jitter reproduces the image") {
    const auto dir = testing::scratch_dir("cli_warp");
    RngState rng(5);
    data::write_raster(dir / "in.ppm", data::grid_to_raster(testing::random_grid({3, 24, 24}, rng, 0, 1)));
    REQUIRE(run_cli({"warp", "--image", (dir / "in.ppm").string(), "--alpha", "0.3", "--beta", "0", "--seed", "1", "--out", (dir / "out.ppm").string()}).code == 0);
    const Grid in = data::raster_to_grid(data::read_raster(dir / "in.ppm"));
    const Grid out = data::raster_to_grid(data::read_raster(dir / "out.ppm"));
    CHECK(testing::max_abs_diff(in, out) < 1e-6);
    REQUIRE(run_cli({"warp", "--image", (dir / "in.ppm").string(), "--alpha", "0.3", "--beta", "0.7", "--seed", "1", "--out", (dir / "w.ppm").string()}).code == 0);
    CHECK(slurp(dir / "w.ppm") != slurp(dir / "in.ppm"));
}

TEST_CASE("cli: gradcheck prints one row per case and succeeds") {
    auto r = run_cli({"gradcheck", "--trials", "1"});
    CHECK(r.code == 0);
    CHECK(r.out.find("\ntotal_loss\tloss\t1\t") != std::string::npos);
    CHECK(r.out.find("\nwarp\tprimitive\t1\t") != std::string::npos);
}
