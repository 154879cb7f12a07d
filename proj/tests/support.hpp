#pragma once

// Helpers shared by the unit and acceptance suites.

#include <cmath>
#include <filesystem>
#include <string>

#include "scribble/grid.hpp"
#include "scribble/ops.hpp"
#include "scribble/rng.hpp"

namespace scribble::testing {

inline Grid random_grid(const Shape& shape, RngState& rng, double lo = -1.0, double hi = 1.0) {
    Grid g(shape);
    for (double& v : g.values()) v = rng.uniform(lo, hi);
    return g;
}

// sum(y * w) with w drawn from a fixed seed, so the reduction is the same on
// every evaluation of a gradcheck closure.
inline Var weighted_sum(Var y, std::uint64_t seed) {
    RngState rng(seed);
    Grid w = random_grid(y.shape(), rng, 0.5, 1.5);
    return ops::sum(ops::mul(y, y.tape()->constant(std::move(w))));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("scribble_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace scribble::testing

#include <vector>

namespace scribble::testing {

// Gaussian elimination with partial pivoting on a dense row-major system.
// Independent of the Eigen path used by the library.
inline std::vector<std::vector<double>> dense_solve(std::vector<std::vector<double>> a, std::vector<std::vector<double>> b) {
    const std::size_t n = a.size(), m = b.empty() ? 0 : b[0].size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            for (std::size_t c = 0; c < m; ++c) b[r][c] -= f * b[col][c];
        }
    }
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) b[r][c] /= a[r][r];
    return b;
}

// TPS block system assembled from scratch: kernel r^2 log r^2, then [1 x y].
// Returns (N + 3) x 2 coefficients: N kernel weights then constant, x, y rows.
template <class PointsT>
std::vector<std::vector<double>> tps_oracle(const PointsT& src, const PointsT& dst, double reg) {
    const std::size_t N = static_cast<std::size_t>(src.rows());
    std::vector<std::vector<double>> a(N + 3, std::vector<double>(N + 3, 0.0));
    std::vector<std::vector<double>> b(N + 3, std::vector<double>(2, 0.0));
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const double dx = src(i, 0) - src(j, 0), dy = src(i, 1) - src(j, 1);
            const double r2 = dx * dx + dy * dy;
            a[i][j] = r2 == 0.0 ? 0.0 : r2 * std::log(r2);
        }
        a[i][i] += reg;
        a[i][N] = a[N][i] = 1.0;
        a[i][N + 1] = a[N + 1][i] = src(i, 0);
        a[i][N + 2] = a[N + 2][i] = src(i, 1);
        b[i][0] = dst(i, 0);
        b[i][1] = dst(i, 1);
    }
    return dense_solve(std::move(a), std::move(b));
}

}  // namespace scribble::testing
