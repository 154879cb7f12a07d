#include "scribble/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "scribble/error.hpp"

namespace scribble::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape& tape_of(const char* op, const Var& v) {
    if (!v.valid()) throw ArgumentError(std::string(op) + ": unbound operand");
    return *v.tape();
}

void require_same_shape(const char* op, const Grid& a, const Grid& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

struct Layout {
    int n, c, h, w;
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

// rank 3 is treated as a batch of one
Layout layout_of(const char* op, const Grid& g) {
    if (g.rank() == 3) return {1, g.dim(0), g.dim(1), g.dim(2)};
    if (g.rank() == 4) return {g.dim(0), g.dim(1), g.dim(2), g.dim(3)};
    throw ShapeError(std::string(op) + ": expected rank 3 or 4, got " + to_string(g.shape()));
}

// Height/width of the last two axes and how many planes precede them.
struct Planes {
    std::size_t count;
    int h, w;
};

Planes planes_of(const char* op, const Grid& g) {
    if (g.rank() < 2) throw ShapeError(std::string(op) + ": expected rank >= 2, got " + to_string(g.shape()));
    const int h = g.dim(-2), w = g.dim(-1);
    const std::size_t per = static_cast<std::size_t>(h) * w;
    return {per ? g.size() / per : 0, h, w};
}

// Elementwise unary op; `deriv(x, y)` returns dy/dx.
template <class F, class D>
Var unary(const char* op, Var x, F f, D deriv) {
    Tape& tape = tape_of(op, x);
    const Grid& xv = x.value();
    Grid out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const int xid = x.id();
    const int yid = static_cast<int>(tape.size());
    return tape.record(op, std::move(out), {x}, [xid, yid, deriv](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        const Grid& xv = t.value(xid);
        const Grid& yv = t.value(yid);
        Grid& dx = *gi[0];
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(xv[i], yv[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    Tape& tape = tape_of("add", a);
    require_same_shape("add", a.value(), b.value());
    Grid out = a.value();
    const Grid& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape.record("add", std::move(out), {a, b}, [](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        for (Grid* d : gi)
            if (d)
                for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    });
}

Var sub(Var a, Var b) {
    Tape& tape = tape_of("sub", a);
    require_same_shape("sub", a.value(), b.value());
    Grid out = a.value();
    const Grid& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return tape.record("sub", std::move(out), {a, b}, [](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        if (gi[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of("mul", a);
    require_same_shape("mul", a.value(), b.value());
    Grid out = a.value();
    const Grid& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const int aid = a.id(), bid = b.id();
    return tape.record("mul", std::move(out), {a, b}, [aid, bid](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        const Grid& av = t.value(aid);
        const Grid& bv = t.value(bid);
        if (gi[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
        if (gi[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
    });
}

Var div(Var a, Var b) {
    Tape& tape = tape_of("div", a);
    require_same_shape("div", a.value(), b.value());
    Grid out = a.value();
    const Grid& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
    const int aid = a.id(), bid = b.id();
    return tape.record("div", std::move(out), {a, b}, [aid, bid](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        const Grid& av = t.value(aid);
        const Grid& bv = t.value(bid);
        if (gi[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / bv[i];
        if (gi[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    });
}

Var maximum(Var a, Var b) {
    Tape& tape = tape_of("maximum", a);
    require_same_shape("maximum", a.value(), b.value());
    const Grid& av = a.value();
    const Grid& bv = b.value();
    Grid out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(av[i], bv[i]);
    const int aid = a.id(), bid = b.id();
    return tape.record("maximum", std::move(out), {a, b},
                       [aid, bid](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
                           const Grid& av = t.value(aid);
                           const Grid& bv = t.value(bid);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               // ties go to the first operand
                               Grid* d = av[i] >= bv[i] ? gi[0] : gi[1];
                               if (d) (*d)[i] += g[i];
                           }
                       });
}

Var add_scalar(Var x, double s) {
    return unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var x, double s) {
    return unary("mul_scalar", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Var rsub_scalar(double s, Var x) {
    return unary("rsub_scalar", x, [s](double v) { return s - v; }, [](double, double) { return -1.0; });
}

Var sigmoid(Var x) {
    return unary(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log_clamped(Var x) {
    return unary(
        "log_clamped", x, [](double v) { return std::log(std::clamp(v, kLogClampMin, 1.0)); },
        [](double v, double) { return (v >= kLogClampMin && v <= 1.0) ? 1.0 / v : 0.0; });
}

Var sqrt(Var x) {
    return unary("sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var abs(Var x) {
    return unary(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Var x) {
    return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
    Tape& tape = tape_of("sum", x);
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return tape.record("sum", Grid::scalar(s), {x}, [](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        const double d = g[0];
        for (double& v : gi[0]->values()) v += d;
    });
}

Var mean(Var x) {
    Tape& tape = tape_of("mean", x);
    const std::size_t n = x.value().size();
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return tape.record("mean", Grid::scalar(s / static_cast<double>(n)), {x},
                       [n](const Tape&, const Grid& g, std::span<Grid* const> gi) {
                           const double d = g[0] / static_cast<double>(n);
                           for (double& v : gi[0]->values()) v += d;
                       });
}

Var expand(Var scalar, const Shape& shape) {
    Tape& tape = tape_of("expand", scalar);
    if (scalar.value().size() != 1) throw ShapeError("expand: operand must be single-element, got " + to_string(scalar.shape()));
    Grid out(shape, scalar.value()[0]);
    return tape.record("expand", std::move(out), {scalar}, [](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        double s = 0.0;
        for (double v : g.data()) s += v;
        (*gi[0])[0] += s;
    });
}

Var reshape(Var x, const Shape& shape) {
    Tape& tape = tape_of("reshape", x);
    Grid out = x.value().reshaped(shape);
    return tape.record("reshape", std::move(out), {x}, [](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    });
}

Var softmax_channels(Var x) {
    Tape& tape = tape_of("softmax_channels", x);
    const Layout L = layout_of("softmax_channels", x.value());
    const Grid& xv = x.value();
    Grid out(xv.shape());
    const std::size_t P = L.plane();
    for (int n = 0; n < L.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * L.c * P;
        for (std::size_t p = 0; p < P; ++p) {
            double m = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < L.c; ++c) m = std::max(m, xv[base + c * P + p]);
            double z = 0.0;
            for (int c = 0; c < L.c; ++c) z += (out[base + c * P + p] = std::exp(xv[base + c * P + p] - m));
            for (int c = 0; c < L.c; ++c) out[base + c * P + p] /= z;
        }
    }
    const int yid = static_cast<int>(tape.size());
    return tape.record("softmax_channels", std::move(out), {x}, [yid, L](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        const Grid& y = t.value(yid);
        Grid& dx = *gi[0];
        const std::size_t P = L.plane();
        for (int n = 0; n < L.n; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * L.c * P;
            for (std::size_t p = 0; p < P; ++p) {
                double dot = 0.0;
                for (int c = 0; c < L.c; ++c) dot += g[base + c * P + p] * y[base + c * P + p];
                for (int c = 0; c < L.c; ++c) {
                    const std::size_t i = base + c * P + p;
                    dx[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

Var concat_channels(std::initializer_list<Var> parts) { return concat_channels(std::span<const Var>(parts.begin(), parts.size())); }

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ArgumentError("concat_channels: no operands");
    Tape& tape = tape_of("concat_channels", parts[0]);
    const Layout first = layout_of("concat_channels", parts[0].value());
    const int rank = parts[0].value().rank();
    int channels = 0;
    std::vector<int> offsets;
    for (const Var& p : parts) {
        const Layout L = layout_of("concat_channels", p.value());
        if (p.value().rank() != rank || L.n != first.n || L.h != first.h || L.w != first.w) {
            throw ShapeError("concat_channels: incompatible shapes " + to_string(parts[0].shape()) + " and " +
                             to_string(p.shape()));
        }
        offsets.push_back(channels);
        channels += L.c;
    }
    Shape shape = rank == 3 ? Shape{channels, first.h, first.w} : Shape{first.n, channels, first.h, first.w};
    Grid out(shape);
    const std::size_t P = first.plane();
    std::vector<int> counts;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Grid& pv = parts[k].value();
        const int c = layout_of("concat_channels", pv).c;
        counts.push_back(c);
        for (int n = 0; n < first.n; ++n) {
            const double* src = pv.data().data() + static_cast<std::size_t>(n) * c * P;
            double* dst = out.data().data() + (static_cast<std::size_t>(n) * channels + offsets[k]) * P;
            std::copy(src, src + c * P, dst);
        }
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record("concat_channels", std::move(out), std::move(inputs),
                       [offsets, counts, channels, first](const Tape&, const Grid& g, std::span<Grid* const> gi) {
                           const std::size_t P = first.plane();
                           for (std::size_t k = 0; k < gi.size(); ++k) {
                               if (!gi[k]) continue;
                               for (int n = 0; n < first.n; ++n) {
                                   const double* src = g.data().data() + (static_cast<std::size_t>(n) * channels + offsets[k]) * P;
                                   double* dst = gi[k]->data().data() + static_cast<std::size_t>(n) * counts[k] * P;
                                   for (std::size_t i = 0; i < counts[k] * P; ++i) dst[i] += src[i];
                               }
                           }
                       });
}

Var slice_channel(Var x, int channel) {
    Tape& tape = tape_of("slice_channel", x);
    const Grid& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("slice_channel: expected C x H x W, got " + to_string(xv.shape()));
    if (channel < 0 || channel >= xv.dim(0)) {
        throw ShapeError("slice_channel: channel " + std::to_string(channel) + " out of range for " + to_string(xv.shape()));
    }
    const std::size_t P = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    Grid out(Shape{xv.dim(1), xv.dim(2)});
    std::copy_n(xv.data().begin() + channel * P, P, out.data().begin());
    return tape.record("slice_channel", std::move(out), {x}, [channel, P](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        double* dst = gi[0]->data().data() + channel * P;
        for (std::size_t i = 0; i < P; ++i) dst[i] += g[i];
    });
}

Var max_pool2(Var x) {
    Tape& tape = tape_of("max_pool2", x);
    const Grid& xv = x.value();
    const Planes pl = planes_of("max_pool2", xv);
    if (pl.h % 2 || pl.w % 2) throw ShapeError("max_pool2: spatial extents must be even, got " + to_string(xv.shape()));
    Shape shape = xv.shape();
    shape[shape.size() - 2] /= 2;
    shape[shape.size() - 1] /= 2;
    Grid out(shape);
    std::vector<std::size_t> argmax(out.size());
    const int oh = pl.h / 2, ow = pl.w / 2;
    std::size_t o = 0;
    for (std::size_t p = 0; p < pl.count; ++p) {
        const std::size_t base = p * pl.h * pl.w;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j, ++o) {
                std::size_t best = base + (2 * i) * pl.w + 2 * j;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) {
                        const std::size_t k = base + (2 * i + a) * pl.w + 2 * j + b;
                        if (xv[k] > xv[best]) best = k;
                    }
                argmax[o] = best;
                out[o] = xv[best];
            }
    }
    return tape.record("max_pool2", std::move(out), {x},
                       [argmax = std::move(argmax)](const Tape&, const Grid& g, std::span<Grid* const> gi) {
                           for (std::size_t o = 0; o < g.size(); ++o) (*gi[0])[argmax[o]] += g[o];
                       });
}

Var upsample2(Var x) {
    Tape& tape = tape_of("upsample2", x);
    const Grid& xv = x.value();
    const Planes pl = planes_of("upsample2", xv);
    Shape shape = xv.shape();
    shape[shape.size() - 2] *= 2;
    shape[shape.size() - 1] *= 2;
    Grid out(shape);
    const int oh = pl.h * 2, ow = pl.w * 2;
    for (std::size_t p = 0; p < pl.count; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j)
                out[(p * oh + i) * ow + j] = xv[(p * pl.h + i / 2) * pl.w + j / 2];
    return tape.record("upsample2", std::move(out), {x}, [pl](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        const int oh = pl.h * 2, ow = pl.w * 2;
        for (std::size_t p = 0; p < pl.count; ++p)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) (*gi[0])[(p * pl.h + i / 2) * pl.w + j / 2] += g[(p * oh + i) * ow + j];
    });
}

Var diff_x(Var x) {
    Tape& tape = tape_of("diff_x", x);
    const Grid& xv = x.value();
    const Planes pl = planes_of("diff_x", xv);
    Grid out(xv.shape());
    for (std::size_t p = 0; p < pl.count; ++p)
        for (int i = 0; i < pl.h; ++i) {
            const std::size_t row = (p * pl.h + i) * pl.w;
            for (int j = 0; j + 1 < pl.w; ++j) out[row + j] = xv[row + j + 1] - xv[row + j];
        }
    return tape.record("diff_x", std::move(out), {x}, [pl](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        Grid& dx = *gi[0];
        for (std::size_t p = 0; p < pl.count; ++p)
            for (int i = 0; i < pl.h; ++i) {
                const std::size_t row = (p * pl.h + i) * pl.w;
                for (int j = 0; j + 1 < pl.w; ++j) {
                    dx[row + j + 1] += g[row + j];
                    dx[row + j] -= g[row + j];
                }
            }
    });
}

Var diff_y(Var x) {
    Tape& tape = tape_of("diff_y", x);
    const Grid& xv = x.value();
    const Planes pl = planes_of("diff_y", xv);
    Grid out(xv.shape());
    for (std::size_t p = 0; p < pl.count; ++p)
        for (int i = 0; i + 1 < pl.h; ++i) {
            const std::size_t row = (p * pl.h + i) * pl.w;
            for (int j = 0; j < pl.w; ++j) out[row + j] = xv[row + pl.w + j] - xv[row + j];
        }
    return tape.record("diff_y", std::move(out), {x}, [pl](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        Grid& dx = *gi[0];
        for (std::size_t p = 0; p < pl.count; ++p)
            for (int i = 0; i + 1 < pl.h; ++i) {
                const std::size_t row = (p * pl.h + i) * pl.w;
                for (int j = 0; j < pl.w; ++j) {
                    dx[row + pl.w + j] += g[row + j];
                    dx[row + j] -= g[row + j];
                }
            }
    });
}

Var global_avg_pool(Var x) {
    Tape& tape = tape_of("global_avg_pool", x);
    const Grid& xv = x.value();
    const Layout L = layout_of("global_avg_pool", xv);
    Shape shape = xv.rank() == 3 ? Shape{L.c} : Shape{L.n, L.c};
    Grid out(shape);
    const std::size_t P = L.plane();
    for (std::size_t k = 0; k < out.size(); ++k) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += xv[k * P + p];
        out[k] = s / static_cast<double>(P);
    }
    return tape.record("global_avg_pool", std::move(out), {x}, [P](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double d = g[k] / static_cast<double>(P);
            for (std::size_t p = 0; p < P; ++p) (*gi[0])[k * P + p] += d;
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& tape = tape_of("matmul", a);
    const Grid& av = a.value();
    const Grid& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
    }
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Grid out(Shape{m, n});
    MapMat(out.data().data(), m, n).noalias() = ConstMapMat(av.data().data(), m, k) * ConstMapMat(bv.data().data(), k, n);
    const int aid = a.id(), bid = b.id();
    return tape.record("matmul", std::move(out), {a, b}, [aid, bid, m, k, n](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        ConstMapMat G(g.data().data(), m, n);
        if (gi[0]) MapMat(gi[0]->data().data(), m, k).noalias() += G * ConstMapMat(t.value(bid).data().data(), k, n).transpose();
        if (gi[1]) MapMat(gi[1]->data().data(), k, n).noalias() += ConstMapMat(t.value(aid).data().data(), m, k).transpose() * G;
    });
}

namespace {

struct ConvGeometry {
    int c, h, w, kh, kw, stride, pad, oh, ow;
    int rows() const { return c * kh * kw; }
    int cols() const { return oh * ow; }
};

void im2col(const double* in, const ConvGeometry& g, double* cols) {
    const int P = g.cols();
    for (int c = 0; c < g.c; ++c)
        for (int a = 0; a < g.kh; ++a)
            for (int b = 0; b < g.kw; ++b) {
                double* row = cols + static_cast<std::size_t>((c * g.kh + a) * g.kw + b) * P;
                for (int i = 0; i < g.oh; ++i) {
                    const int y = i * g.stride - g.pad + a;
                    for (int j = 0; j < g.ow; ++j) {
                        const int x = j * g.stride - g.pad + b;
                        row[i * g.ow + j] =
                            (y >= 0 && y < g.h && x >= 0 && x < g.w) ? in[(static_cast<std::size_t>(c) * g.h + y) * g.w + x] : 0.0;
                    }
                }
            }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* in) {
    const int P = g.cols();
    for (int c = 0; c < g.c; ++c)
        for (int a = 0; a < g.kh; ++a)
            for (int b = 0; b < g.kw; ++b) {
                const double* row = cols + static_cast<std::size_t>((c * g.kh + a) * g.kw + b) * P;
                for (int i = 0; i < g.oh; ++i) {
                    const int y = i * g.stride - g.pad + a;
                    if (y < 0 || y >= g.h) continue;
                    for (int j = 0; j < g.ow; ++j) {
                        const int x = j * g.stride - g.pad + b;
                        if (x >= 0 && x < g.w) in[(static_cast<std::size_t>(c) * g.h + y) * g.w + x] += row[i * g.ow + j];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var input, Var kernel, int stride, int padding) {
    Tape& tape = tape_of("conv2d", input);
    const Grid& xv = input.value();
    const Grid& kv = kernel.value();
    if (kv.rank() != 4) throw ShapeError("conv2d: kernel must be O x C x kh x kw, got " + to_string(kv.shape()));
    const Layout L = layout_of("conv2d", xv);
    if (L.c != kv.dim(1)) {
        throw ShapeError("conv2d: input " + to_string(xv.shape()) + " has " + std::to_string(L.c) +
                         " channels but kernel " + to_string(kv.shape()) + " expects " + std::to_string(kv.dim(1)));
    }
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
    ConvGeometry geo{L.c, L.h, L.w, kv.dim(2), kv.dim(3), stride, padding, 0, 0};
    geo.oh = (L.h + 2 * padding - geo.kh) / stride + 1;
    geo.ow = (L.w + 2 * padding - geo.kw) / stride + 1;
    if (geo.oh <= 0 || geo.ow <= 0) {
        throw ShapeError("conv2d: kernel " + to_string(kv.shape()) + " larger than padded input " + to_string(xv.shape()));
    }
    const int O = kv.dim(0);
    Shape shape = xv.rank() == 3 ? Shape{O, geo.oh, geo.ow} : Shape{L.n, O, geo.oh, geo.ow};
    Grid out(shape);
    std::vector<double> cols(static_cast<std::size_t>(geo.rows()) * geo.cols());
    ConstMapMat K(kv.data().data(), O, geo.rows());
    for (int n = 0; n < L.n; ++n) {
        im2col(xv.data().data() + static_cast<std::size_t>(n) * L.c * L.plane(), geo, cols.data());
        MapMat(out.data().data() + static_cast<std::size_t>(n) * O * geo.cols(), O, geo.cols()).noalias() =
            K * ConstMapMat(cols.data(), geo.rows(), geo.cols());
    }
    const int xid = input.id(), kid = kernel.id();
    return tape.record("conv2d", std::move(out), {input, kernel},
                       [xid, kid, geo, O, L](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
                           const Grid& xv = t.value(xid);
                           const Grid& kv = t.value(kid);
                           std::vector<double> cols(static_cast<std::size_t>(geo.rows()) * geo.cols());
                           ConstMapMat K(kv.data().data(), O, geo.rows());
                           for (int n = 0; n < L.n; ++n) {
                               ConstMapMat G(g.data().data() + static_cast<std::size_t>(n) * O * geo.cols(), O, geo.cols());
                               if (gi[1]) {
                                   im2col(xv.data().data() + static_cast<std::size_t>(n) * L.c * L.plane(), geo, cols.data());
                                   MapMat(gi[1]->data().data(), O, geo.rows()).noalias() +=
                                       G * ConstMapMat(cols.data(), geo.rows(), geo.cols()).transpose();
                               }
                               if (gi[0]) {
                                   MapMat(cols.data(), geo.rows(), geo.cols()).noalias() = K.transpose() * G;
                                   col2im_add(cols.data(), geo, gi[0]->data().data() + static_cast<std::size_t>(n) * L.c * L.plane());
                               }
                           }
                       });
}

Var add_channel_bias(Var x, Var bias) {
    Tape& tape = tape_of("add_channel_bias", x);
    const Grid& xv = x.value();
    const Layout L = layout_of("add_channel_bias", xv);
    if (bias.value().rank() != 1 || bias.value().dim(0) != L.c) {
        throw ShapeError("add_channel_bias: bias " + to_string(bias.shape()) + " does not match input " + to_string(xv.shape()));
    }
    Grid out = xv;
    const Grid& bv = bias.value();
    const std::size_t P = L.plane();
    for (int n = 0; n < L.n; ++n)
        for (int c = 0; c < L.c; ++c) {
            double* p = out.data().data() + (static_cast<std::size_t>(n) * L.c + c) * P;
            for (std::size_t i = 0; i < P; ++i) p[i] += bv[c];
        }
    return tape.record("add_channel_bias", std::move(out), {x, bias}, [L](const Tape&, const Grid& g, std::span<Grid* const> gi) {
        const std::size_t P = L.plane();
        if (gi[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
        if (gi[1])
            for (int n = 0; n < L.n; ++n)
                for (int c = 0; c < L.c; ++c) {
                    const double* p = g.data().data() + (static_cast<std::size_t>(n) * L.c + c) * P;
                    double s = 0.0;
                    for (std::size_t i = 0; i < P; ++i) s += p[i];
                    (*gi[1])[c] += s;
                }
    });
}

Var scale_channels(Var x, Var gate) {
    Tape& tape = tape_of("scale_channels", x);
    const Grid& xv = x.value();
    const Grid& gv = gate.value();
    if (xv.rank() != 3 || gv.size() != static_cast<std::size_t>(xv.dim(0))) {
        throw ShapeError("scale_channels: gate " + to_string(gv.shape()) + " does not match features " + to_string(xv.shape()));
    }
    const std::size_t P = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    Grid out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gv[i / P];
    const int xid = x.id(), gid = gate.id();
    return tape.record("scale_channels", std::move(out), {x, gate}, [xid, gid, P](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        const Grid& xv = t.value(xid);
        const Grid& gv = t.value(gid);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (gi[0]) (*gi[0])[i] += g[i] * gv[i / P];
            if (gi[1]) (*gi[1])[i / P] += g[i] * xv[i];
        }
    });
}

Var scale_pixels(Var x, Var gate) {
    Tape& tape = tape_of("scale_pixels", x);
    const Grid& xv = x.value();
    const Grid& gv = gate.value();
    if (xv.rank() != 3 || gv.size() != static_cast<std::size_t>(xv.dim(1)) * xv.dim(2)) {
        throw ShapeError("scale_pixels: gate " + to_string(gv.shape()) + " does not match features " + to_string(xv.shape()));
    }
    const std::size_t P = gv.size();
    Grid out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gv[i % P];
    const int xid = x.id(), gid = gate.id();
    return tape.record("scale_pixels", std::move(out), {x, gate}, [xid, gid, P](const Tape& t, const Grid& g, std::span<Grid* const> gi) {
        const Grid& xv = t.value(xid);
        const Grid& gv = t.value(gid);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (gi[0]) (*gi[0])[i] += g[i] * gv[i % P];
            if (gi[1]) (*gi[1])[i % P] += g[i] * xv[i];
        }
    });
}

namespace {

struct BilinearTap {
    std::size_t i00, i01, i10, i11;
    double w00, w01, w10, w11;
};

BilinearTap make_tap(const SamplePoint& p, int h, int w) {
    const double fx0 = std::floor(p.x), fy0 = std::floor(p.y);
    const double fx = p.x - fx0, fy = p.y - fy0;
    const int x0 = std::clamp(static_cast<int>(fx0), 0, w - 1), x1 = std::clamp(static_cast<int>(fx0) + 1, 0, w - 1);
    const int y0 = std::clamp(static_cast<int>(fy0), 0, h - 1), y1 = std::clamp(static_cast<int>(fy0) + 1, 0, h - 1);
    return {static_cast<std::size_t>(y0) * w + x0,
            static_cast<std::size_t>(y0) * w + x1,
            static_cast<std::size_t>(y1) * w + x0,
            static_cast<std::size_t>(y1) * w + x1,
            (1 - fy) * (1 - fx),
            (1 - fy) * fx,
            fy * (1 - fx),
            fy * fx};
}

}  // namespace

Var bilinear_sample(Var input, std::span<const SamplePoint> points, int out_h, int out_w) {
    Tape& tape = tape_of("bilinear_sample", input);
    const Grid& xv = input.value();
    if (xv.rank() != 3) throw ShapeError("bilinear_sample: expected C x H x W, got " + to_string(xv.shape()));
    if (points.size() != static_cast<std::size_t>(out_h) * out_w) {
        throw ShapeError("bilinear_sample: " + std::to_string(points.size()) + " points for a " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " output");
    }
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const std::size_t P_in = static_cast<std::size_t>(H) * W, P_out = points.size();
    std::vector<BilinearTap> taps(P_out);
    std::vector<char> valid(P_out);
    for (std::size_t k = 0; k < P_out; ++k) {
        valid[k] = points[k].valid && std::isfinite(points[k].x) && std::isfinite(points[k].y);
        if (valid[k]) taps[k] = make_tap(points[k], H, W);
    }
    Grid out(Shape{C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        const double* src = xv.data().data() + c * P_in;
        double* dst = out.data().data() + c * P_out;
        for (std::size_t k = 0; k < P_out; ++k) {
            if (!valid[k]) continue;
            const BilinearTap& t = taps[k];
            dst[k] = t.w00 * src[t.i00] + t.w01 * src[t.i01] + t.w10 * src[t.i10] + t.w11 * src[t.i11];
        }
    }
    return tape.record("bilinear_sample", std::move(out), {input},
                       [taps = std::move(taps), valid = std::move(valid), C, P_in, P_out](const Tape&, const Grid& g,
                                                                                          std::span<Grid* const> gi) {
                           for (int c = 0; c < C; ++c) {
                               double* dst = gi[0]->data().data() + c * P_in;
                               const double* src = g.data().data() + c * P_out;
                               for (std::size_t k = 0; k < P_out; ++k) {
                                   if (!valid[k]) continue;
                                   const BilinearTap& t = taps[k];
                                   dst[t.i00] += t.w00 * src[k];
                                   dst[t.i01] += t.w01 * src[k];
                                   dst[t.i10] += t.w10 * src[k];
                                   dst[t.i11] += t.w11 * src[k];
                               }
                           }
                       });
}

}  // namespace scribble::ops
