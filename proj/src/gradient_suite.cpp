#include "scribble/gradient_suite.hpp"

#include <chrono>
#include <memory>

#include "scribble/deform.hpp"
#include "scribble/losses.hpp"
#include "scribble/model.hpp"
#include "scribble/ops.hpp"

namespace scribble {

namespace {

using losses::Label;
using losses::ScribbleMap;

// Through the network the loss is piecewise smooth (relu, max-pool, |.|), so
// composite checks step finely enough to stay off the switching surfaces.
constexpr double kPiecewiseStep = 1e-7;

Grid random_grid(const Shape& shape, RngState& rng, double lo, double hi) {
    Grid g(shape);
    for (double& v : g.values()) v = rng.uniform(lo, hi);
    return g;
}

// sum(y * w) with fixed random weights, so the check sees every output element.
Var weighted_sum(Var y, const Grid& w) { return ops::sum(ops::mul(y, y.tape()->constant(w))); }

ScribbleMap random_labels(int h, int w, RngState& rng, double p_annotated) {
    ScribbleMap m(h, w);
    for (auto& l : m.labels()) {
        const double u = rng.uniform();
        if (u < p_annotated / 2) l = Label::target;
        else if (u < p_annotated) l = Label::background;
    }
    m.at(0, 0) = Label::target;
    m.at(h - 1, w - 1) = Label::background;
    return m;
}

// Unary case: y = body(x), checked through a random weighted sum.
GradCase unary(std::string name, Shape shape, double lo, double hi, std::function<Var(Var)> body) {
    return {name, "primitive", [=](RngState& rng) {
                Grid x = random_grid(shape, rng, lo, hi);
                Tape probe;
                Grid w = random_grid(body(probe.constant(x)).shape(), rng, 0.5, 1.5);
                return GradTrial{[=](Tape&, Var v) { return weighted_sum(body(v), w); }, std::move(x)};
            }};
}

// Case with one fixed random operand c of shape cshape.
GradCase binary(std::string name, Shape shape, Shape cshape, double lo, double hi, std::function<Var(Var, Var)> body) {
    return {name, "primitive", [=](RngState& rng) {
                Grid x = random_grid(shape, rng, lo, hi);
                Grid c = random_grid(cshape, rng, -1.0, 1.0);
                Tape probe;
                Grid w = random_grid(body(probe.constant(x), probe.constant(c)).shape(), rng, 0.5, 1.5);
                return GradTrial{[=](Tape& t, Var v) { return weighted_sum(body(v, t.constant(c)), w); }, std::move(x)};
            }};
}

std::vector<GradCase> primitive_cases() {
    return {
        binary("add", {3, 4}, {3, 4}, -1, 1, [](Var x, Var c) { return ops::add(x, c); }),
        binary("sub", {3, 4}, {3, 4}, -1, 1, [](Var x, Var c) { return ops::sub(c, x); }),
        binary("mul", {3, 4}, {3, 4}, -1, 1, [](Var x, Var c) { return ops::mul(x, ops::add(x, c)); }),
        unary("div", {3, 4}, 0.5, 2, [](Var x) { return ops::div(ops::square(x), ops::add_scalar(x, 1.0)); }),
        binary("maximum", {4, 4}, {4, 4}, -1, 1, [](Var x, Var c) { return ops::maximum(x, c); }),
        unary("add_scalar", {5}, -1, 1, [](Var x) { return ops::add_scalar(x, 0.3); }),
        unary("mul_scalar", {5}, -1, 1, [](Var x) { return ops::mul_scalar(x, -1.7); }),
        unary("rsub_scalar", {5}, -1, 1, [](Var x) { return ops::square(ops::rsub_scalar(1.0, x)); }),
        unary("sigmoid", {2, 3, 3}, -3, 3, [](Var x) { return ops::sigmoid(x); }),
        unary("relu", {2, 3, 3}, -1, 1, [](Var x) { return ops::relu(x); }),
        unary("log_clamped", {3, 3}, 0.05, 0.95, [](Var x) { return ops::log_clamped(x); }),
        unary("sqrt", {3, 3}, 0.1, 2, [](Var x) { return ops::sqrt(x); }),
        unary("abs", {3, 3}, -1, 1, [](Var x) { return ops::abs(x); }),
        unary("square", {3, 3}, -1, 1, [](Var x) { return ops::square(x); }),
        unary("sum", {3, 3}, -1, 1, [](Var x) { return ops::square(ops::sum(x)); }),
        unary("mean", {3, 3}, -1, 1, [](Var x) { return ops::square(ops::mean(x)); }),
        unary("expand", {}, -1, 1, [](Var x) { return ops::square(ops::expand(x, {2, 3})); }),
        unary("reshape", {2, 6}, -1, 1, [](Var x) { return ops::square(ops::reshape(x, {3, 4})); }),
        unary("softmax_channels", {3, 4, 4}, -2, 2, [](Var x) { return ops::softmax_channels(x); }),
        binary("concat_channels", {2, 3, 3}, {1, 3, 3}, -1, 1, [](Var x, Var c) { return ops::concat_channels({c, x, ops::square(x)}); }),
        unary("slice_channel", {3, 4, 4}, -1, 1, [](Var x) { return ops::slice_channel(x, 1); }),
        unary("max_pool2", {2, 4, 6}, -1, 1, [](Var x) { return ops::max_pool2(x); }),
        unary("upsample2", {2, 3, 3}, -1, 1, [](Var x) { return ops::upsample2(x); }),
        unary("diff_x", {8, 8}, -1, 1, [](Var x) { return ops::diff_x(x); }),
        unary("diff_y", {8, 8}, -1, 1, [](Var x) { return ops::diff_y(x); }),
        unary("global_avg_pool", {3, 4, 4}, -1, 1, [](Var x) { return ops::global_avg_pool(x); }),
        binary("matmul", {3, 4}, {4, 2}, -1, 1, [](Var x, Var c) { return ops::matmul(x, c); }),
        binary("conv2d", {2, 5, 5}, {3, 2, 3, 3}, -1, 1, [](Var x, Var k) { return ops::conv2d(x, k, 1, 1); }),
        binary("conv2d_kernel", {3, 2, 3, 3}, {1, 2, 6, 6}, -1, 1, [](Var k, Var x) { return ops::conv2d(x, k, 2, 1); }),
        binary("add_channel_bias", {3}, {3, 2, 2}, -1, 1, [](Var b, Var x) { return ops::square(ops::add_channel_bias(x, b)); }),
        binary("scale_channels", {3, 3, 3}, {3}, -1, 1, [](Var x, Var g) { return ops::scale_channels(x, ops::square(g)); }),
        binary("scale_channels_gate", {3}, {3, 3, 3}, -1, 1, [](Var g, Var x) { return ops::scale_channels(x, ops::square(g)); }),
        binary("scale_pixels", {2, 3, 3}, {3, 3}, -1, 1, [](Var x, Var g) { return ops::scale_pixels(x, g); }),
        binary("scale_pixels_gate", {1, 3, 3}, {2, 3, 3}, -1, 1, [](Var g, Var x) { return ops::scale_pixels(x, ops::square(g)); }),
        {"bilinear_sample", "primitive",
         [](RngState& rng) {
             Grid x = random_grid({2, 5, 5}, rng, -1, 1);
             std::vector<ops::SamplePoint> pts(16);
             for (auto& p : pts) p = {rng.uniform(-0.7, 4.7), rng.uniform(-0.7, 4.7), rng.uniform() > 0.1};
             Grid w = random_grid({2, 4, 4}, rng, 0.5, 1.5);
             return GradTrial{[=](Tape&, Var v) { return weighted_sum(ops::bilinear_sample(v, pts, 4, 4), w); }, std::move(x)};
         }},
        {"warp", "primitive",
         [](RngState& rng) {
             Grid x = random_grid({2, 8, 8}, rng, 0, 1);
             deform::DeformationSpec spec{0.3, 0.7, RngState(rng.next_u64()), deform::kDefaultRegularization};
             const deform::TpsMap map = deform::make_deformation(spec).inverse;
             Grid w = random_grid({2, 8, 8}, rng, 0.5, 1.5);
             return GradTrial{[=](Tape&, Var v) { return weighted_sum(deform::warp(map, v).output, w); }, std::move(x)};
         }},
    };
}

const model::ModelConfig kTinyModel{4, 2, true, 3};

// Loss through the tiny model, differentiated with respect to the image or
// to one parameter entry.
struct NetFixture {
    model::ModelParams params;
    Grid image;
    ScribbleMap scribble, pseudo;
    deform::DeformationSpec spec;

    explicit NetFixture(RngState& rng) {
        params = model::init_params(kTinyModel, RngState(rng.next_u64()));
        RngState bias(rng.next_u64());
        for (auto& e : params.entries())
            if (e.name.ends_with(".bias"))
                for (double& v : e.value.values()) v = bias.uniform(-0.2, 0.2);
        image = random_grid({3, 8, 8}, rng, 0, 1);
        scribble = random_labels(8, 8, rng, 0.3);
        pseudo = random_labels(8, 8, rng, 0.7);
        spec = {0.3, 0.7, RngState(rng.next_u64()), deform::kDefaultRegularization};
    }

    model::BoundParams bind(Tape& t, const std::string& probe_name, Var probe) const {
        std::vector<Var> vars;
        for (const auto& e : params.entries()) vars.push_back(e.name == probe_name ? probe : t.constant(e.value));
        return model::BoundParams(params, std::move(vars));
    }
};

using NetLoss = std::function<Var(const NetFixture&, const model::BoundParams&, Var image)>;

GradCase net_case(std::string name, NetLoss loss, const std::string& wrt) {
    return {name, "loss", [=](RngState& rng) {
                auto fx = std::make_shared<NetFixture>(rng);
                if (wrt == "image") {
                    return GradTrial{[=](Tape& t, Var v) { return loss(*fx, fx->bind(t, "", Var{}), v); }, fx->image, kPiecewiseStep};
                }
                return GradTrial{[=](Tape& t, Var v) { return loss(*fx, fx->bind(t, wrt, v), t.constant(fx->image)); },
                                 fx->params.get(wrt), kPiecewiseStep};
            }};
}

std::vector<GradCase> loss_cases() {
    losses::LossConfig cfg;
    std::vector<GradCase> out = {
        {"partial_cross_entropy", "loss",
         [](RngState& rng) {
             Grid x = random_grid({6, 6}, rng, 0.05, 0.95);
             ScribbleMap s = random_labels(6, 6, rng, 0.5);
             return GradTrial{[=](Tape&, Var v) { return losses::partial_cross_entropy(v, s); }, std::move(x)};
         }},
        {"length_term", "loss",
         [](RngState& rng) {
             return GradTrial{[](Tape&, Var v) { return losses::length_term(v, 1e-8); }, random_grid({6, 6}, rng, 0, 1)};
         }},
        {"coherence_term", "loss",
         [](RngState& rng) {
             Grid img = random_grid({3, 6, 6}, rng, 0, 1);
             return GradTrial{[=](Tape& t, Var v) { return losses::coherence_term(v, t.constant(img)); }, random_grid({6, 6}, rng, 0, 1)};
         }},
        {"coherence_term_image", "loss",
         [](RngState& rng) {
             Grid u = random_grid({6, 6}, rng, 0, 1);
             return GradTrial{[=](Tape& t, Var v) { return losses::coherence_term(t.constant(u), v); }, random_grid({3, 6, 6}, rng, 0, 1)};
         }},
        {"active_contour", "loss",
         [cfg](RngState& rng) {
             Grid img = random_grid({3, 6, 6}, rng, 0, 1);
             return GradTrial{[=](Tape& t, Var v) { return losses::active_contour(v, t.constant(img), cfg).l_ac; },
                              random_grid({6, 6}, rng, 0, 1)};
         }},
        {"pseudo_label_loss", "loss",
         [](RngState& rng) {
             Grid x = random_grid({6, 6}, rng, 0.05, 0.95);
             ScribbleMap s = random_labels(6, 6, rng, 0.7);
             return GradTrial{[=](Tape&, Var v) { return losses::pseudo_label_loss(v, s); }, std::move(x)};
         }},
    };
    auto consistency = [](const NetFixture& fx, const model::BoundParams& b, Var img) {
        return losses::deformation_consistency(kTinyModel, b, img, fx.spec).loss;
    };
    auto total = [cfg](const NetFixture& fx, const model::BoundParams& b, Var img) {
        losses::LossConfig all = cfg;
        all.enable_pseudo = true;
        losses::LossInputs in{&kTinyModel, &b, img, &fx.scribble, &fx.pseudo, fx.spec};
        return losses::total_loss(in, all).total;
    };
    out.push_back(net_case("deformation_consistency", consistency, "image"));
    out.push_back(net_case("deformation_consistency_head", consistency, "head.weight"));
    out.push_back(net_case("total_loss", total, "image"));
    out.push_back(net_case("total_loss_enc0", total, "enc0.weight"));
    return out;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
    auto cases = primitive_cases();
    for (auto& c : loss_cases()) cases.push_back(std::move(c));
    return cases;
}

std::vector<GradSuiteRow> run_gradient_suite(int trials, std::uint64_t seed, const std::function<void(const GradSuiteRow&)>& on_row) {
    PrecisionScope scope(Precision::f64);
    std::vector<GradSuiteRow> rows;
    const RngState root(seed);
    std::uint64_t stream = 0;
    for (const GradCase& c : gradient_cases()) {
        const auto t0 = std::chrono::steady_clock::now();
        RngState rng = root.split(stream++);
        GradSuiteRow row{c.name, c.group, trials, 0.0, 0.0};
        for (int k = 0; k < trials; ++k) {
            GradTrial t = c.make(rng);
            row.max_rel_error = std::max(row.max_rel_error, gradcheck(t.f, t.x, t.step));
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (on_row) on_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace scribble
