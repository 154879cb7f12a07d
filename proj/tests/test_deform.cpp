#include <cmath>

#include "doctest.h"
#include "scribble/deform.hpp"
#include "scribble/error.hpp"
#include "scribble/gradcheck.hpp"
#include "support.hpp"

using namespace scribble;
using namespace scribble::deform;
using scribble::testing::max_abs_diff;
using scribble::testing::random_grid;

namespace {

Grid checkerboard(int c, int h, int w, int cell) {
    Grid g(Shape{c, h, w});
    for (int k = 0; k < c; ++k)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) g.at(k, i, j) = ((i / cell + j / cell) % 2) ? 0.9 : 0.1;
    return g;
}

double coefficient_gap(const TpsMap& map, const std::vector<std::vector<double>>& oracle) {
    const auto N = map.source_points().rows();
    double gap = 0.0;
    for (Eigen::Index i = 0; i < N; ++i)
        for (int d = 0; d < 2; ++d) gap = std::max(gap, std::abs(map.weights()(i, d) - oracle[i][d]));
    for (int r = 0; r < 3; ++r)
        for (int d = 0; d < 2; ++d) gap = std::max(gap, std::abs(map.affine()(r, d) - oracle[N + r][d]));
    return gap;
}

}  // namespace

TEST_CASE("control grid sizes follow floor(2/alpha) + 1") {
    ControlGrid g = make_cp_grid(0.3);
    CHECK(g.n == 7);
    CHECK(g.count() == 49);
    CHECK(g.base(1, 0) - g.base(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(g.base(7, 1) - g.base(0, 1) == doctest::Approx(1.0 / 3.0));

    ControlGrid corners = make_cp_grid(2.0);
    CHECK(corners.count() == 4);
    CHECK(corners.base(0, 0) == -1.0);
    CHECK(corners.base(0, 1) == -1.0);
    CHECK(corners.base(3, 0) == 1.0);
    CHECK(corners.base(3, 1) == 1.0);

    ControlGrid three = make_cp_grid(1.0);
    CHECK(three.count() == 9);
    for (int j = 0; j < 3; ++j) CHECK(three.base(j, 0) == -1.0 + j);

    CHECK_THROWS_AS(make_cp_grid(0.0), ArgumentError);
    CHECK_THROWS_AS(make_cp_grid(2.5), ArgumentError);
    CHECK_THROWS_AS(make_cp_grid(-0.3), ArgumentError);
}

TEST_CASE("variation sampling") {
    RngState rng(4);
    ControlGrid zero = sample_variation(make_cp_grid(0.3), 0.0, rng);
    CHECK(zero.variation.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zero.perturbed == zero.base);

    ControlGrid g = sample_variation(make_cp_grid(0.3), 0.7, rng);
    CHECK(g.variation.cwiseAbs().maxCoeff() <= 0.7);
    CHECK((g.perturbed - (g.base + g.variation)).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(sample_variation(make_cp_grid(0.3), -0.1, rng), ArgumentError);

    // moments of U[-b, b]: mean 0, variance b^2/3
    RngState mrng(99);
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    while (n < 100000) {
        ControlGrid d = sample_variation(make_cp_grid(0.3), 0.7, mrng);
        for (Eigen::Index i = 0; i < d.variation.size(); ++i) {
            const double v = d.variation.data()[i];
            s += v;
            s2 += v * v;
            ++n;
        }
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) <= 0.01);
    CHECK(std::abs(var - 0.49 / 3.0) <= 0.05 * 0.49 / 3.0);
}

TEST_CASE("TPS fit of the identity has identity affine part and zero weights") {
    ControlGrid g = make_cp_grid(0.5);
    TpsMap m = tps_fit(g.base, g.base, 0.0);
    CHECK(m.weights().cwiseAbs().maxCoeff() <= 1e-10);
    Eigen::Matrix<double, 3, 2> id;
    id << 0, 0, 1, 0, 0, 1;
    CHECK((m.affine() - id).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("TPS fit of a translation is affine") {
    ControlGrid g = make_cp_grid(0.5);
    Points shifted = g.base;
    shifted.col(0).array() += 0.25;
    shifted.col(1).array() -= 0.1;
    TpsMap m = tps_fit(g.base, shifted, 0.0);
    CHECK(m.weights().cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(m.affine()(0, 0) == doctest::Approx(0.25).epsilon(1e-10));
    CHECK(m.affine()(0, 1) == doctest::Approx(-0.1).epsilon(1e-10));
}

TEST_CASE("TPS fit interpolates and matches the dense-solve oracle") {
    RngState rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        ControlGrid g = sample_variation(make_cp_grid(1.0), 0.3, rng);
        TpsMap m = tps_fit(g.base, g.perturbed, 0.0);
        for (int i = 0; i < g.count(); ++i) {
            const auto p = m(g.base(i, 0), g.base(i, 1));
            CHECK(std::abs(p(0) - g.perturbed(i, 0)) <= 1e-8);
            CHECK(std::abs(p(1) - g.perturbed(i, 1)) <= 1e-8);
        }
        CHECK(coefficient_gap(m, scribble::testing::tps_oracle(g.base, g.perturbed, 0.0)) <= 1e-8);

        // side conditions
        const Points& w = m.weights();
        CHECK(std::abs(w.col(0).sum()) <= 1e-8);
        CHECK(std::abs(w.col(1).sum()) <= 1e-8);
        CHECK((w.transpose() * g.base.col(0)).cwiseAbs().maxCoeff() <= 1e-8);
        CHECK((w.transpose() * g.base.col(1)).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("TPS fit rejects degenerate configurations") {
    Points line(4, 2);
    line << 0, 0, 1, 1, 2, 2, 3, 3;
    CHECK_THROWS_AS(tps_fit(line, line), NumericError);
    Points dup(4, 2);
    dup << 0, 0, 1, 0, 0, 1, 1, 0;
    try {
        tps_fit(dup, dup);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
    Points two(2, 2);
    two << 0, 0, 1, 1;
    CHECK_THROWS_AS(tps_fit(two, two), ArgumentError);
    Points three(3, 2);
    three << 0, 0, 1, 0, 0, 1;
    CHECK_THROWS_AS(tps_fit(three, Points(4, 2)), ShapeError);
}

TEST_CASE("warp with the identity map reproduces the input") {
    RngState rng(1);
    Grid img = random_grid({3, 16, 12}, rng, 0, 1);
    ControlGrid g = make_cp_grid(0.3);
    WarpGrid w = warp(tps_fit(g.base, g.base), img);
    CHECK(max_abs_diff(w.output, img) <= 1e-6);
    for (double v : w.validity.data()) CHECK(v == 1.0);
}

TEST_CASE("one-pixel translation shifts the image with an invalid border strip") {
    const int H = 8, W = 10;
    RngState rng(2);
    Grid img = random_grid({2, H, W}, rng, 0, 1);
    ControlGrid g = make_cp_grid(0.5);
    Points moved = g.base;
    moved.col(0).array() += 2.0 / W;
    WarpGrid w = warp(tps_fit(g.base, moved, 0.0), img);
    for (int i = 0; i < H; ++i) {
        CHECK(w.validity.at(i, 0) == 0.0);
        for (int c = 0; c < 2; ++c) CHECK(w.output.at(c, i, 0) == 0.0);
        for (int j = 1; j < W; ++j) {
            CHECK(w.validity.at(i, j) == 1.0);
            for (int c = 0; c < 2; ++c) CHECK(std::abs(w.output.at(c, i, j) - img.at(c, i, j - 1)) <= 1e-9);
        }
    }
}

TEST_CASE("constant input stays constant on the valid region under any map") {
    RngState rng(3);
    DeformationSpec spec{0.3, 0.7, RngState(5)};
    Deformation d = make_deformation(spec);
    WarpGrid w = warp(d.inverse, Grid({1, 16, 16}, 0.42));
    for (std::size_t k = 0; k < w.validity.size(); ++k) {
        if (w.validity[k] == 1.0) CHECK(std::abs(w.output[k] - 0.42) <= 1e-12);
        else CHECK(w.output[k] == 0.0);
    }
}

TEST_CASE("forward-direction maps are refitted for backward warping") {
    DeformationSpec spec{0.5, 0.2, RngState(8)};
    Deformation d = make_deformation(spec);
    RngState rng(9);
    Grid img = random_grid({1, 12, 12}, rng, 0, 1);
    WarpGrid a = warp(d.forward, img);
    WarpGrid b = warp(d.inverse, img);
    CHECK(max_abs_diff(a.output, b.output) <= 1e-6);
    CHECK(a.validity == b.validity);
}

TEST_CASE("warp is linear on the valid region") {
    RngState rng(10);
    DeformationSpec spec{0.3, 0.7, RngState(11)};
    Deformation d = make_deformation(spec);
    Grid x = random_grid({2, 16, 16}, rng);
    Grid y = random_grid({2, 16, 16}, rng);
    const double a = 0.7, b = -1.3;
    Grid combo(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];
    WarpGrid wx = warp(d.inverse, x), wy = warp(d.inverse, y), wc = warp(d.inverse, combo);
    for (std::size_t i = 0; i < combo.size(); ++i) CHECK(std::abs(wc.output[i] - (a * wx.output[i] + b * wy.output[i])) <= 1e-6);
}

TEST_CASE("warp gradient with respect to its input passes gradcheck") {
    PrecisionScope p64(Precision::f64);
    RngState rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        DeformationSpec spec{0.5, 0.4, rng.split(trial)};
        Deformation d = make_deformation(spec);
        Grid x = random_grid({2, 8, 8}, rng);
        ScalarFn f = [&d](Tape&, Var in) { return scribble::testing::weighted_sum(warp(d.inverse, in).output, 3); };
        CHECK(gradcheck(f, x) < 1e-4);
    }
}

TEST_CASE("deform examples") {
    Grid board = checkerboard(3, 32, 32, 4);

    DeformResult still = deform::deform(board, DeformationSpec{0.3, 0.0, RngState(1)});
    CHECK(max_abs_diff(still.output, board) <= 1e-6);

    DeformationSpec spec{0.3, 0.7, RngState(17)};
    DeformResult a = deform::deform(board, spec);
    DeformResult b = deform::deform(board, spec);
    CHECK(a.output == b.output);
    CHECK(a.validity == b.validity);
    CHECK(a.control.perturbed == b.control.perturbed);

    double mad = 0.0;
    for (std::size_t i = 0; i < board.size(); ++i) mad += std::abs(a.output[i] - board[i]);
    CHECK(mad / board.size() > 0.0);

    CHECK_THROWS_AS(deform::deform(board, DeformationSpec{0.0, 0.1, RngState(1)}), ArgumentError);
    CHECK_THROWS_AS(deform::deform(board, DeformationSpec{0.3, -1.0, RngState(1)}), ArgumentError);
}

TEST_CASE("TPS interpolation is exact for random non-degenerate control grids") {
    RngState rng(31);
    for (double alpha : {0.3, 0.5, 1.0})
        for (double beta : {0.1, 0.3, 0.7}) {
            ControlGrid g = sample_variation(make_cp_grid(alpha), beta, rng);
            TpsMap m = tps_fit(g.base, g.perturbed, 0.0);
            for (int i = 0; i < g.count(); ++i) {
                const auto p = m(g.base(i, 0), g.base(i, 1));
                CHECK((p - g.perturbed.row(i)).cwiseAbs().maxCoeff() <= 1e-6);
            }
        }
}
