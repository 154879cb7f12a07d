#pragma once

#include <span>
#include <vector>

#include "scribble/tape.hpp"

// Differentiable primitives. Every function records one node on the tape that
// owns its operands. Spatial operators act on the last two axes; "channel
// axis" means axis 0 of a rank-3 grid and axis 1 of a rank-4 grid.
namespace scribble::ops {

inline constexpr double kLogClampMin = 1e-12;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var maximum(Var a, Var b);

Var add_scalar(Var x, double s);
Var mul_scalar(Var x, double s);
// s - x
Var rsub_scalar(double s, Var x);

Var sigmoid(Var x);
Var relu(Var x);
// log(clamp(x, 1e-12, 1)); zero gradient where the clamp is active
Var log_clamped(Var x);
Var sqrt(Var x);
Var abs(Var x);
Var square(Var x);

Var sum(Var x);
Var mean(Var x);
// Broadcast a single-element Var to `shape`.
Var expand(Var scalar, const Shape& shape);
Var reshape(Var x, const Shape& shape);

Var softmax_channels(Var x);
Var concat_channels(std::span<const Var> parts);
Var concat_channels(std::initializer_list<Var> parts);
// Rank-3 input C x H x W -> rank-2 H x W.
Var slice_channel(Var x, int channel);

Var max_pool2(Var x);
Var upsample2(Var x);

// Forward differences along width (x) and height (y); the trailing
// column/row has derivative 0.
Var diff_x(Var x);
Var diff_y(Var x);

// C x H x W -> C, or N x C x H x W -> N x C.
Var global_avg_pool(Var x);
Var matmul(Var a, Var b);

// Input C x H x W (or N x C x H x W), kernel O x C x kh x kw.
Var conv2d(Var input, Var kernel, int stride = 1, int padding = 0);
// Adds bias[c] to every pixel of channel c.
Var add_channel_bias(Var x, Var bias);
// x: C x H x W, gate: C (one factor per channel)
Var scale_channels(Var x, Var gate);
// x: C x H x W, gate: 1 x H x W or H x W (one factor per pixel)
Var scale_pixels(Var x, Var gate);

struct SamplePoint {
    double x = 0.0;  // pixel-space column coordinate
    double y = 0.0;  // pixel-space row coordinate
    bool valid = true;
};

// Bilinear sampling of a C x H x W grid at fractional pixel coordinates.
// Output is C x out_h x out_w; invalid points give 0. Neighbour indices are
// clamped to the frame, so a constant input stays constant on valid points.
// Differentiable with respect to `input` only.
Var bilinear_sample(Var input, std::span<const SamplePoint> points, int out_h, int out_w);

}  // namespace scribble::ops
