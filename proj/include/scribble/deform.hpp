#pragma once

#include <Eigen/Core>
#include <vector>

#include "scribble/grid.hpp"
#include "scribble/ops.hpp"
#include "scribble/rng.hpp"
#include "scribble/tape.hpp"

// Random smooth deformation of an image: an n x n lattice of control points
// over [-1,1]^2 is jittered uniformly and a thin-plate spline interpolates the
// displacement to every pixel.
//
// Coordinates are normalized so pixel k of an extent W has its centre at
// -1 + (2k+1)/W; the frame edges sit at -1 and 1.
namespace scribble::deform {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 2>;

inline constexpr double kDefaultRegularization = 1e-10;

struct DeformationSpec {
    double alpha = 0.3;  // control point spacing, normalized units, (0, 2]
    double beta = 0.7;   // half-range of the uniform jitter, >= 0
    RngState rng;
    double regularization = kDefaultRegularization;

    void validate() const;
};

// Control points per axis for a spacing alpha: floor(2 / alpha) + 1.
int points_per_axis(double alpha);

struct ControlGrid {
    int n = 0;
    Points base;       // C: lattice, row-major, y outer
    Points variation;  // V
    Points perturbed;  // C + V

    int count() const { return n * n; }
};

ControlGrid make_cp_grid(double alpha);
// Draws V i.i.d. uniform on [-beta, beta] and sets perturbed = base + V.
ControlGrid sample_variation(ControlGrid grid, double beta, RngState& rng);

enum class TpsDirection {
    forward,  // original -> deformed coordinates
    inverse,  // deformed -> original coordinates, used for backward warping
};

class TpsMap {
public:
    TpsMap() = default;
    TpsMap(Points source, Points target, Eigen::Matrix<double, 3, 2> affine, Points weights, TpsDirection direction)
        : source_(std::move(source)), target_(std::move(target)), affine_(affine), weights_(std::move(weights)), direction_(direction) {}

    const Points& source_points() const { return source_; }
    const Points& target_points() const { return target_; }
    // Rows: constant, x coefficient, y coefficient.
    const Eigen::Matrix<double, 3, 2>& affine() const { return affine_; }
    const Points& weights() const { return weights_; }
    TpsDirection direction() const { return direction_; }

    Eigen::RowVector2d operator()(double x, double y) const;

private:
    Points source_;
    Points target_;
    Eigen::Matrix<double, 3, 2> affine_ = Eigen::Matrix<double, 3, 2>::Zero();
    Points weights_;
    TpsDirection direction_ = TpsDirection::forward;
};

// U(r) = r^2 log(r^2), U(0) = 0, written in terms of r^2.
double tps_kernel(double r2);

// Solves [[K + reg*I, P], [P^T, 0]] [W; A] = [target; 0] with P = [1 x y].
TpsMap tps_fit(const Points& source, const Points& target, double regularization = kDefaultRegularization,
               TpsDirection direction = TpsDirection::forward);

double pixel_to_normalized(int k, int extent);
double normalized_to_pixel(double u, int extent);

// For each output pixel: where to sample the input, and whether that lies in the frame.
std::vector<ops::SamplePoint> sample_points(const TpsMap& map, int height, int width);

struct WarpVar {
    Var output;
    Grid validity;  // height x width, 1 inside the frame, 0 outside
};

struct WarpGrid {
    Grid output;
    Grid validity;
};

// Backward warp of a C x H x W input. A forward-direction map is refitted with
// source and target swapped; an inverse-direction map is used as is.
WarpVar warp(const TpsMap& map, Var input);
WarpGrid warp(const TpsMap& map, const Grid& input);

struct Deformation {
    ControlGrid control;
    TpsMap forward;
    TpsMap inverse;
};

// make_cp_grid -> sample_variation -> tps_fit, drawing from a copy of spec.rng.
Deformation make_deformation(const DeformationSpec& spec);

struct DeformResult {
    Grid output;
    Grid validity;
    ControlGrid control;
};

DeformResult deform(const Grid& image, const DeformationSpec& spec);

}  // namespace scribble::deform
