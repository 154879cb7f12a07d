#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scribble/gradcheck.hpp"
#include "scribble/rng.hpp"

namespace scribble {

// One random instance of a check: the function and the point to check it at.
struct GradTrial {
    ScalarFn f;
    Grid x;
    double step = 1e-5;
};

struct GradCase {
    std::string name;
    std::string group;  // "primitive" or "loss"
    std::function<GradTrial(RngState&)> make;
};

struct GradSuiteRow {
    std::string name;
    std::string group;
    int trials = 0;
    double max_rel_error = 0.0;
    double seconds = 0.0;
};

// Every differentiable primitive, the warp, every loss term and the total loss.
std::vector<GradCase> gradient_cases();

// Runs every case over `trials` random instances in 64-bit mode.
std::vector<GradSuiteRow> run_gradient_suite(int trials, std::uint64_t seed,
                                             const std::function<void(const GradSuiteRow&)>& on_row = {});

}  // namespace scribble
