#include "scribble/deform.hpp"

#include <Eigen/LU>
#include <cmath>
#include <sstream>

#include "scribble/error.hpp"

namespace scribble::deform {

void DeformationSpec::validate() const {
    if (!(alpha > 0.0 && alpha <= 2.0)) throw ArgumentError("deformation alpha must lie in (0, 2], got " + std::to_string(alpha));
    if (!(beta >= 0.0)) throw ArgumentError("deformation beta must be >= 0, got " + std::to_string(beta));
    if (!(regularization >= 0.0)) throw ArgumentError("TPS regularization must be >= 0");
}

int points_per_axis(double alpha) {
    if (!(alpha > 0.0 && alpha <= 2.0)) throw ArgumentError("deformation alpha must lie in (0, 2], got " + std::to_string(alpha));
    return static_cast<int>(std::floor(2.0 / alpha)) + 1;
}

ControlGrid make_cp_grid(double alpha) {
    ControlGrid g;
    g.n = points_per_axis(alpha);
    const int N = g.count();
    g.base.resize(N, 2);
    const double step = 2.0 / (g.n - 1);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            g.base(i * g.n + j, 0) = -1.0 + step * j;
            g.base(i * g.n + j, 1) = -1.0 + step * i;
        }
    g.variation = Points::Zero(N, 2);
    g.perturbed = g.base;
    return g;
}

ControlGrid sample_variation(ControlGrid grid, double beta, RngState& rng) {
    if (!(beta >= 0.0)) throw ArgumentError("deformation beta must be >= 0, got " + std::to_string(beta));
    const int N = grid.count();
    grid.variation.resize(N, 2);
    for (int k = 0; k < N; ++k)
        for (int d = 0; d < 2; ++d) grid.variation(k, d) = beta == 0.0 ? 0.0 : rng.uniform(-beta, beta);
    grid.perturbed = grid.base + grid.variation;
    return grid;
}

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

Eigen::RowVector2d TpsMap::operator()(double x, double y) const {
    Eigen::RowVector2d out = affine_.row(0) + x * affine_.row(1) + y * affine_.row(2);
    for (Eigen::Index i = 0; i < source_.rows(); ++i) {
        const double dx = x - source_(i, 0), dy = y - source_(i, 1);
        const double u = tps_kernel(dx * dx + dy * dy);
        if (u != 0.0) out += u * weights_.row(i);
    }
    return out;
}

namespace {

void check_configuration(const Points& source) {
    const Eigen::Index N = source.rows();
    if (N < 3) throw ArgumentError("TPS fit needs at least 3 control points, got " + std::to_string(N));
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = i + 1; j < N; ++j)
            if ((source.row(i) - source.row(j)).squaredNorm() < 1e-24) {
                std::ostringstream os;
                os << "TPS system singular: duplicate source points " << i << " and " << j << " at (" << source(i, 0) << ", "
                   << source(i, 1) << ")";
                throw NumericError(os.str());
            }
    double spread = 0.0, scale = 0.0;
    for (Eigen::Index i = 1; i < N; ++i) {
        const Eigen::RowVector2d a = source.row(i) - source.row(0);
        scale = std::max(scale, a.squaredNorm());
        for (Eigen::Index j = i + 1; j < N; ++j) {
            const Eigen::RowVector2d b = source.row(j) - source.row(0);
            spread = std::max(spread, std::abs(a(0) * b(1) - a(1) * b(0)));
        }
    }
    if (spread <= 1e-12 * std::max(scale, 1e-300)) {
        throw NumericError("TPS system singular: all " + std::to_string(N) + " source points are collinear");
    }
}

}  // namespace

TpsMap tps_fit(const Points& source, const Points& target, double regularization, TpsDirection direction) {
    if (source.rows() != target.rows()) {
        throw ShapeError("TPS fit: " + std::to_string(source.rows()) + " source points but " + std::to_string(target.rows()) +
                         " targets");
    }
    if (!(regularization >= 0.0)) throw ArgumentError("TPS regularization must be >= 0");
    check_configuration(source);

    const Eigen::Index N = source.rows();
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(N + 3, N + 3);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j < N; ++j) L(i, j) = tps_kernel((source.row(i) - source.row(j)).squaredNorm());
        L(i, i) += regularization;
        L(i, N) = L(N, i) = 1.0;
        L(i, N + 1) = L(N + 1, i) = source(i, 0);
        L(i, N + 2) = L(N + 2, i) = source(i, 1);
    }
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(N + 3, 2);
    rhs.topRows(N) = target;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
    if (!lu.isInvertible()) {
        throw NumericError("TPS system singular for " + std::to_string(N) + " control points (rank " + std::to_string(lu.rank()) +
                           " of " + std::to_string(N + 3) + ")");
    }
    const Eigen::MatrixXd sol = lu.solve(rhs);
    Points weights = sol.topRows(N);
    Eigen::Matrix<double, 3, 2> affine = sol.bottomRows(3);
    return TpsMap(source, target, affine, std::move(weights), direction);
}

double pixel_to_normalized(int k, int extent) { return -1.0 + (2.0 * k + 1.0) / extent; }

double normalized_to_pixel(double u, int extent) { return ((u + 1.0) * extent - 1.0) / 2.0; }

std::vector<ops::SamplePoint> sample_points(const TpsMap& map, int height, int width) {
    std::vector<ops::SamplePoint> pts(static_cast<std::size_t>(height) * width);
    for (int i = 0; i < height; ++i) {
        const double y = pixel_to_normalized(i, height);
        for (int j = 0; j < width; ++j) {
            const Eigen::RowVector2d s = map(pixel_to_normalized(j, width), y);
            const bool inside = s(0) >= -1.0 && s(0) <= 1.0 && s(1) >= -1.0 && s(1) <= 1.0;
            pts[static_cast<std::size_t>(i) * width + j] = {normalized_to_pixel(s(0), width), normalized_to_pixel(s(1), height), inside};
        }
    }
    return pts;
}

namespace {

const TpsMap& sampling_map(const TpsMap& map, TpsMap& storage) {
    if (map.direction() == TpsDirection::inverse) return map;
    storage = tps_fit(map.target_points(), map.source_points(), kDefaultRegularization, TpsDirection::inverse);
    return storage;
}

}  // namespace

WarpVar warp(const TpsMap& map, Var input) {
    const Grid& x = input.value();
    if (x.rank() != 3) throw ShapeError("warp: expected C x H x W input, got " + to_string(x.shape()));
    TpsMap storage;
    const TpsMap& inv = sampling_map(map, storage);
    const int H = x.dim(1), W = x.dim(2);
    const auto pts = sample_points(inv, H, W);
    Grid validity(Shape{H, W});
    for (std::size_t k = 0; k < pts.size(); ++k) validity[k] = pts[k].valid ? 1.0 : 0.0;
    return {ops::bilinear_sample(input, pts, H, W), std::move(validity)};
}

WarpGrid warp(const TpsMap& map, const Grid& input) {
    Tape tape;
    WarpVar w = warp(map, tape.constant(input));
    return {w.output.value(), std::move(w.validity)};
}

Deformation make_deformation(const DeformationSpec& spec) {
    spec.validate();
    RngState rng = spec.rng;
    Deformation d;
    d.control = sample_variation(make_cp_grid(spec.alpha), spec.beta, rng);
    d.forward = tps_fit(d.control.base, d.control.perturbed, spec.regularization, TpsDirection::forward);
    d.inverse = tps_fit(d.control.perturbed, d.control.base, spec.regularization, TpsDirection::inverse);
    return d;
}

DeformResult deform(const Grid& image, const DeformationSpec& spec) {
    Deformation d = make_deformation(spec);
    WarpGrid w = warp(d.inverse, image);
    return {std::move(w.output), std::move(w.validity), std::move(d.control)};
}

}  // namespace scribble::deform
