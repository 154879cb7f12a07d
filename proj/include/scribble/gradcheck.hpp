#pragma once

#include <functional>

#include "scribble/tape.hpp"

namespace scribble {

// Scalar-valued function of one Grid, expressed on a fresh tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central-difference check of the tape gradient of f at x. Per element the
// error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). Elements
// whose step-h estimate is off by more than 1e-6 are re-estimated over steps
// 1000h .. h/10, keeping the most self-consistent one.
GradcheckResult gradcheck_detail(const ScalarFn& f, const Grid& x, double h = 1e-5);

inline double gradcheck(const ScalarFn& f, const Grid& x, double h = 1e-5) { return gradcheck_detail(f, x, h).max_rel_error; }

}  // namespace scribble
