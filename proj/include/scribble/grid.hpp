#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace scribble {

using Shape = std::vector<int>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

enum class Precision { f32, f64 };

// Global arithmetic precision. In f32 mode every primitive rounds its result
// to binary32; in f64 mode results are kept in double and checked for NaN/Inf.
void set_precision(Precision p);
Precision precision();

// RAII switch used by tests and the trainer.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(saved_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

// Dense row-major array of up to four axes (batch, channel, height, width).
// A rank-0 Grid is a scalar with one element.
class Grid {
public:
    Grid() : data_(1, 0.0) {}
    explicit Grid(Shape shape, double fill = 0.0);
    Grid(Shape shape, std::vector<double> data);

    static Grid scalar(double v) { return Grid(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexing for rank-2 (h, w) and rank-3 (c, h, w) grids.
    double& at(int h, int w) { return data_[static_cast<std::size_t>(h) * shape_.back() + w]; }
    double at(int h, int w) const { return data_[static_cast<std::size_t>(h) * shape_.back() + w]; }
    double& at(int c, int h, int w);
    double at(int c, int h, int w) const;

    // Value of a single-element grid.
    double item() const;

    Grid reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const;

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

// Round every value to binary32 when the global precision is f32, and reject
// non-finite values when it is f64.
void apply_precision(Grid& g, const char* op_name);

}  // namespace scribble
