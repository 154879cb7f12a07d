#include "scribble/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "scribble/error.hpp"

namespace scribble {

namespace {

constexpr double kRefineThreshold = 1e-6;

double evaluate(const ScalarFn& f, const Grid& x) {
    Tape tape;
    Var out = f(tape, tape.constant(x));
    if (out.value().size() != 1) throw ShapeError("gradcheck: function returned non-scalar " + to_string(out.shape()));
    return out.value()[0];
}

double central(const ScalarFn& f, Grid& probe, std::size_t i, double x, double h) {
    probe[i] = x + h;
    const double up = evaluate(f, probe);
    probe[i] = x - h;
    const double down = evaluate(f, probe);
    probe[i] = x;
    return (up - down) / (2.0 * h);
}

double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

// Estimates at steps 1000h .. h/10; returns the smaller-step member of the
// adjacent pair that agrees best. Chosen without looking at the analytic value.
double refined(const ScalarFn& f, Grid& probe, std::size_t i, double x, double h) {
    std::vector<double> est;
    for (double s : {1e3, 1e2, 1e1, 1.0, 1e-1}) est.push_back(central(f, probe, i, x, h * s));
    std::size_t best = 0;
    for (std::size_t k = 1; k + 1 < est.size(); ++k)
        if (std::abs(est[k] - est[k + 1]) < std::abs(est[best] - est[best + 1])) best = k;
    return est[best + 1];
}

}  // namespace

GradcheckResult gradcheck_detail(const ScalarFn& f, const Grid& x, double h) {
    if (!(h > 0.0)) throw ArgumentError("gradcheck: step size must be positive");

    Tape tape;
    Var xv = tape.variable(x);
    Var out = f(tape, xv);
    if (out.value().size() != 1) throw ShapeError("gradcheck: function returned non-scalar " + to_string(out.shape()));
    Gradients grads = tape.backward(out);
    const Grid analytic = grads.contains(xv) ? grads.of(xv) : Grid(x.shape(), 0.0);

    GradcheckResult result;
    Grid probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = analytic[i];
        double numeric = central(f, probe, i, x[i], h);
        // Cancellation or round-off can swamp the plain estimate (e.g. a
        // derivative of 1e-7 on a function of size 10); re-estimate then.
        if (relative_error(a, numeric) > kRefineThreshold) numeric = refined(f, probe, i, x[i], h);
        const double err = relative_error(a, numeric);
        if (err > result.max_rel_error || i == 0) {
            result.max_rel_error = std::max(result.max_rel_error, err);
            result.worst_index = i;
            result.analytic = a;
            result.numeric = numeric;
        }
    }
    return result;
}

}  // namespace scribble
