#include "scribble/grid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "scribble/error.hpp"

namespace scribble {

namespace {
std::atomic<Precision> g_precision{Precision::f64};
}

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

Grid::Grid(Shape shape, double fill) : shape_(std::move(shape)) {
    if (shape_.size() > 4) throw ShapeError("grid rank above 4: " + to_string(shape_));
    data_.assign(element_count(shape_), fill);
}

Grid::Grid(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 4) throw ShapeError("grid rank above 4: " + to_string(shape_));
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                         " values, got " + std::to_string(data_.size()));
    }
}

int Grid::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
    }
    return shape_[axis];
}

double& Grid::at(int c, int h, int w) {
    const int hh = shape_[rank() - 2], ww = shape_[rank() - 1];
    return data_[(static_cast<std::size_t>(c) * hh + h) * ww + w];
}

double Grid::at(int c, int h, int w) const {
    const int hh = shape_[rank() - 2], ww = shape_[rank() - 1];
    return data_[(static_cast<std::size_t>(c) * hh + h) * ww + w];
}

double Grid::item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar grid " + to_string(shape_));
    return data_[0];
}

Grid Grid::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Grid(std::move(shape), data_);
}

void Grid::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Grid::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void apply_precision(Grid& g, const char* op_name) {
    if (precision() == Precision::f32) {
        for (double& v : g.values()) v = static_cast<double>(static_cast<float>(v));
        return;
    }
    if (!g.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + op_name + " " + to_string(g.shape()));
    }
}

}  // namespace scribble
