#include "scribble/losses.hpp"

#include <cmath>

#include "scribble/error.hpp"
#include "scribble/ops.hpp"

namespace scribble::losses {

ScribbleMap::ScribbleMap(int height, int width, Label fill) : height_(height), width_(width) {
    if (height < 1 || width < 1) throw ShapeError("scribble map extents must be positive, got " + std::to_string(height) + "x" + std::to_string(width));
    labels_.assign(static_cast<std::size_t>(height) * width, fill);
}

std::size_t ScribbleMap::count(Label label) const {
    std::size_t n = 0;
    for (Label l : labels_) n += l == label;
    return n;
}

void ScribbleMap::require_both_classes(const std::string& context) const {
    if (count(Label::target) == 0) throw ArgumentError(context + ": scribble has no target pixel");
    if (count(Label::background) == 0) throw ArgumentError(context + ": scribble has no background pixel");
}

Grid ScribbleMap::mask(Label label) const {
    Grid g(Shape{height_, width_}, 0.0);
    for (std::size_t k = 0; k < labels_.size(); ++k) g[k] = labels_[k] == label ? 1.0 : 0.0;
    return g;
}

ScribbleMap ScribbleMap::crop(int top, int left, int height, int width) const {
    if (top < 0 || left < 0 || top + height > height_ || left + width > width_) {
        throw ShapeError("crop " + std::to_string(height) + "x" + std::to_string(width) + " at (" + std::to_string(top) + "," +
                         std::to_string(left) + ") exceeds " + std::to_string(height_) + "x" + std::to_string(width_));
    }
    ScribbleMap out(height, width);
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) out.at(i, j) = at(top + i, left + j);
    return out;
}

void LossConfig::validate() const {
    if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
    if (lambda_ic < 0 || pseudo_weight < 0 || weight_dc < 0 || weight_ac < 0) throw ConfigError("loss weights must be >= 0");
}

namespace {

void check_frame(const Var& pred, const ScribbleMap& map, const char* who) {
    if (pred.shape() != Shape{map.height(), map.width()}) {
        throw ShapeError(std::string(who) + ": prediction " + to_string(pred.shape()) + " does not match label map [" +
                         std::to_string(map.height()) + "x" + std::to_string(map.width()) + "]");
    }
}

// -sum(t * log p) - sum(b * log(1 - p)) for indicator grids t, b.
Var masked_bce_sum(Var pred, const ScribbleMap& labels) {
    Tape& tape = *pred.tape();
    Var t = tape.constant(labels.mask(Label::target));
    Var b = tape.constant(labels.mask(Label::background));
    Var pos = ops::sum(ops::mul(t, ops::log_clamped(pred)));
    Var neg = ops::sum(ops::mul(b, ops::log_clamped(ops::rsub_scalar(1.0, pred))));
    return ops::mul_scalar(ops::add(pos, neg), -1.0);
}

Var as_frame(Var x) {
    // H x W -> 1 x H x W for the warp, which expects a channel axis
    return ops::reshape(x, {1, x.shape()[0], x.shape()[1]});
}

Consistency consistency_from(const model::ModelConfig& cfg, const model::BoundParams& params, Var image, Var pred_target,
                             const deform::DeformationSpec& spec) {
    const deform::Deformation d = deform::make_deformation(spec);
    deform::WarpVar a = deform::warp(d.inverse, as_frame(pred_target));
    deform::WarpVar warped_image = deform::warp(d.inverse, image);
    Var b = ops::slice_channel(model::forward(cfg, params, warped_image.output), 0);

    Grid valid = a.validity;
    for (std::size_t k = 0; k < valid.size(); ++k) valid[k] *= warped_image.validity[k];
    std::size_t n = 0;
    for (double v : valid.data()) n += v > 0;
    if (n == 0) throw NumericError("deformation consistency: the deformation leaves no valid pixel");

    Tape& tape = *image.tape();
    Var a2 = ops::reshape(a.output, b.shape());
    Var diff = ops::mul(tape.constant(std::move(valid)), ops::abs(ops::sub(a2, b)));
    return {ops::mul_scalar(ops::sum(diff), 1.0 / static_cast<double>(n)), n};
}

}  // namespace

Var partial_cross_entropy(Var pred_target, const ScribbleMap& scribble) {
    check_frame(pred_target, scribble, "partial_cross_entropy");
    if (scribble.annotated() == 0) throw ArgumentError("partial_cross_entropy: scribble has no annotated pixel");
    return masked_bce_sum(pred_target, scribble);
}

Var length_term(Var u, double epsilon) {
    if (!(epsilon > 0)) throw ArgumentError("length_term: epsilon must be > 0");
    if (u.shape().size() != 2) throw ShapeError("length_term: expected H x W, got " + to_string(u.shape()));
    Var g2 = ops::add(ops::square(ops::diff_x(u)), ops::square(ops::diff_y(u)));
    return ops::sum(ops::sqrt(ops::add_scalar(g2, epsilon)));
}

Var coherence_term(Var u, Var image) {
    const Shape us = u.shape();
    const Shape is = image.shape();
    if (us.size() != 2 || is.size() != 3 || is[1] != us[0] || is[2] != us[1]) {
        throw ShapeError("coherence_term: mask " + to_string(us) + " does not match image " + to_string(is));
    }
    const int C = is[0];
    Var v = ops::rsub_scalar(1.0, u);
    Var mass_t = ops::add_scalar(ops::sum(u), kCoherenceEpsilon);
    Var mass_b = ops::add_scalar(ops::sum(v), kCoherenceEpsilon);
    Var total;
    for (int c = 0; c < C; ++c) {
        Var p = ops::slice_channel(image, c);
        Var sigma_t = ops::expand(ops::div(ops::sum(ops::mul(u, p)), mass_t), us);
        Var sigma_b = ops::expand(ops::div(ops::sum(ops::mul(v, p)), mass_b), us);
        Var e = ops::add(ops::sum(ops::mul(u, ops::square(ops::sub(p, sigma_t)))), ops::sum(ops::mul(v, ops::square(ops::sub(p, sigma_b)))));
        total = c == 0 ? e : ops::add(total, e);
    }
    return ops::mul_scalar(total, 1.0 / C);
}

ActiveContour active_contour(Var u, Var image, const LossConfig& config) {
    config.validate();
    Var length = length_term(u, config.epsilon);
    Var l_ic = coherence_term(u, image);
    return {ops::add(length, ops::mul_scalar(l_ic, config.lambda_ic)), length, l_ic};
}

Consistency deformation_consistency(const model::ModelConfig& cfg, const model::BoundParams& params, Var image,
                                    const deform::DeformationSpec& spec) {
    spec.validate();
    Var pred = ops::slice_channel(model::forward(cfg, params, image), 0);
    return consistency_from(cfg, params, image, pred, spec);
}

Var pseudo_label_loss(Var pred_target, const ScribbleMap& pseudo) {
    check_frame(pred_target, pseudo, "pseudo_label_loss");
    const std::size_t n = pseudo.annotated();
    if (n == 0) return pred_target.tape()->constant(Grid::scalar(0.0));
    return ops::mul_scalar(masked_bce_sum(pred_target, pseudo), 1.0 / static_cast<double>(n));
}

namespace {

// Runs one component, turning a numeric failure or a non-finite value into an
// error that names the component.
template <class F>
auto guarded(const char* component, F&& f) {
    try {
        auto result = f();
        return result;
    } catch (const NumericError& e) {
        throw NumericError(std::string("loss component ") + component + ": " + e.what());
    }
}

double finite_item(const char* component, const Var& v) {
    const double x = v.value().item();
    if (!std::isfinite(x)) throw NumericError(std::string("loss component ") + component + " is not finite (" + std::to_string(x) + ")");
    return x;
}

}  // namespace

TotalLoss total_loss(const LossInputs& in, const LossConfig& config) {
    config.validate();
    if (!in.model || !in.params || !in.scribble) throw ArgumentError("total_loss: model, params and scribble are required");
    if (config.enable_pseudo && !in.pseudo) throw ArgumentError("total_loss: pseudo term enabled without a pseudo-label map");

    Tape& tape = *in.image.tape();
    Var pred = guarded("forward", [&] { return ops::slice_channel(model::forward(*in.model, *in.params, in.image), 0); });
    TotalLoss out;
    std::vector<Var> terms;

    if (config.enable_pc) {
        Var l = guarded("l_pc", [&] { return partial_cross_entropy(pred, *in.scribble); });
        out.report.l_pc = finite_item("l_pc", l);
        terms.push_back(l);
    }
    if (config.enable_dc) {
        in.deformation.validate();
        Consistency c = guarded("l_dc", [&] { return consistency_from(*in.model, *in.params, in.image, pred, in.deformation); });
        out.report.l_dc = finite_item("l_dc", c.loss);
        out.report.valid_pixel_count = c.valid_count;
        terms.push_back(ops::mul_scalar(c.loss, config.weight_dc));
    }
    if (config.enable_ac) {
        ActiveContour ac = guarded("l_ac", [&] { return active_contour(pred, in.image, config); });
        out.report.length = finite_item("length", ac.length);
        out.report.l_ic = finite_item("l_ic", ac.l_ic);
        out.report.l_ac = finite_item("l_ac", ac.l_ac);
        terms.push_back(ops::mul_scalar(ac.l_ac, config.weight_ac));
    }
    if (config.enable_pseudo) {
        Var l = guarded("l_pseudo", [&] { return pseudo_label_loss(pred, *in.pseudo); });
        out.report.l_pseudo = finite_item("l_pseudo", l);
        terms.push_back(ops::mul_scalar(l, config.pseudo_weight));
    }

    out.total = tape.constant(Grid::scalar(0.0));
    for (const Var& t : terms) out.total = ops::add(out.total, t);
    out.report.l_total = finite_item("l_total", out.total);
    return out;
}

}  // namespace scribble::losses
