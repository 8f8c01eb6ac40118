#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqsad/errors.hpp"
#include "vqsad/rng.hpp"

namespace vqsad {

// Dense row-major 2-D array of doubles. Scalars are [1,1], row vectors [1,n],
// column vectors [m,1].
class Array {
public:
    Array() = default;
    Array(long rows, long cols) : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows * cols), 0.0) {
        if (rows < 0 || cols < 0) throw ShapeError("negative array extent");
    }

    static Array zeros(long rows, long cols) { return Array(rows, cols); }

    static Array full(long rows, long cols, double value) {
        Array a(rows, cols);
        for (double& x : a.v_) x = value;
        return a;
    }

    static Array scalar(double value) { return full(1, 1, value); }

    static Array from(long rows, long cols, std::vector<double> values) {
        if (static_cast<long>(values.size()) != rows * cols)
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape [" +
                             std::to_string(rows) + "," + std::to_string(cols) + "]");
        Array a;
        a.rows_ = rows;
        a.cols_ = cols;
        a.v_ = std::move(values);
        return a;
    }

    static Array uniform(long rows, long cols, double lo, double hi, Rng& rng) {
        Array a(rows, cols);
        for (double& x : a.v_) x = lo + (hi - lo) * rng.uniform();
        return a;
    }

    long rows() const { return rows_; }
    long cols() const { return cols_; }
    long size() const { return rows_ * cols_; }
    bool same_shape(const Array& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const { return "[" + std::to_string(rows_) + "," + std::to_string(cols_) + "]"; }

    double& at(long r, long c) { return v_[static_cast<std::size_t>(r * cols_ + c)]; }
    double at(long r, long c) const { return v_[static_cast<std::size_t>(r * cols_ + c)]; }
    double& operator[](long i) { return v_[static_cast<std::size_t>(i)]; }
    double operator[](long i) const { return v_[static_cast<std::size_t>(i)]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    const std::vector<double>& values() const { return v_; }

    bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
    double scalar_value() const {
        if (!is_scalar()) throw ShapeError("scalar access on " + shape_str());
        return v_[0];
    }

private:
    long rows_ = 0;
    long cols_ = 0;
    std::vector<double> v_;
};

}  // namespace vqsad
