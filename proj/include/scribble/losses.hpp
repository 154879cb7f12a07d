#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "scribble/deform.hpp"
#include "scribble/model.hpp"
#include "scribble/tape.hpp"

namespace scribble::losses {

// For pseudo-label maps `unknown` plays the role of IGNORE.
enum class Label : std::uint8_t { unknown = 0, target = 1, background = 2 };

class ScribbleMap {
public:
    ScribbleMap() = default;
    ScribbleMap(int height, int width, Label fill = Label::unknown);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    Label& at(int i, int j) { return labels_[static_cast<std::size_t>(i) * width_ + j]; }
    Label at(int i, int j) const { return labels_[static_cast<std::size_t>(i) * width_ + j]; }
    const std::vector<Label>& labels() const noexcept { return labels_; }
    std::vector<Label>& labels() noexcept { return labels_; }

    std::size_t count(Label label) const;
    std::size_t annotated() const { return count(Label::target) + count(Label::background); }
    // Throws ArgumentError unless there is at least one target and one background pixel.
    void require_both_classes(const std::string& context) const;
    // Indicator grid (H x W) of pixels carrying `label`.
    Grid mask(Label label) const;
    ScribbleMap crop(int top, int left, int height, int width) const;

    friend bool operator==(const ScribbleMap&, const ScribbleMap&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<Label> labels_;
};

struct LossConfig {
    double lambda_ic = 1.0;
    double epsilon = 1e-8;
    double pseudo_weight = 0.5;
    double weight_dc = 1.0;
    double weight_ac = 1.0;
    bool enable_dc = true;
    bool enable_ac = true;
    bool enable_pc = true;
    bool enable_pseudo = false;

    void validate() const;
};

struct LossReport {
    double l_pc = 0.0;
    double l_dc = 0.0;
    double length = 0.0;
    double l_ic = 0.0;
    double l_ac = 0.0;
    double l_pseudo = 0.0;
    double l_total = 0.0;
    std::size_t valid_pixel_count = 0;
};

inline constexpr double kCoherenceEpsilon = 1e-8;

// Sum over annotated pixels of the binary cross entropy against the scribble label.
Var partial_cross_entropy(Var pred_target, const ScribbleMap& scribble);

// Sum over pixels of sqrt(dx^2 + dy^2 + epsilon).
Var length_term(Var u, double epsilon);

// Soft two-region within-variance of `image` (C x H x W) under weights u and 1-u,
// averaged over channels.
Var coherence_term(Var u, Var image);

struct ActiveContour {
    Var l_ac;
    Var length;
    Var l_ic;
};
ActiveContour active_contour(Var u, Var image, const LossConfig& config);

struct Consistency {
    Var loss;
    std::size_t valid_count = 0;
};
// Mean |warp(f(x)) - f(warp(x))| on the target channel over pixels valid in both
// warps, with one control grid drawn from spec and shared by both paths.
Consistency deformation_consistency(const model::ModelConfig& model, const model::BoundParams& params, Var image,
                                    const deform::DeformationSpec& spec);

// Mean binary cross entropy over non-ignored pixels; 0 when everything is ignored.
Var pseudo_label_loss(Var pred_target, const ScribbleMap& pseudo);

struct LossInputs {
    const model::ModelConfig* model = nullptr;
    const model::BoundParams* params = nullptr;
    Var image;  // C x H x W, on the same tape as params
    const ScribbleMap* scribble = nullptr;
    const ScribbleMap* pseudo = nullptr;  // required only when the pseudo term is enabled
    deform::DeformationSpec deformation;
};

struct TotalLoss {
    Var total;
    LossReport report;
};
TotalLoss total_loss(const LossInputs& inputs, const LossConfig& config);

}  // namespace scribble::losses
