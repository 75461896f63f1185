#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mivae/errors.hpp"

namespace mivae::diff {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major array of doubles. Rank 0 and 1 tensors are viewed as a
// single row when a matrix interpretation is needed.
class Tensor {
public:
    Tensor() : shape_{1, 1}, values_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_shape();
        values_.assign(shape_product(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        check_shape();
        if (shape_product(shape_) != values_.size()) {
            throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                                 std::to_string(shape_product(shape_)) + " values, got " +
                                 std::to_string(values_.size()));
        }
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, 0.0); }

    static Tensor row(std::span<const double> values) {
        return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
    }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros(n, n);
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::size_t rows() const noexcept {
        return shape_.size() < 2 ? 1 : size() / shape_.back();
    }
    std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    std::span<const double> row_span(std::size_t r) const {
        return std::span<const double>(values_).subspan(r * cols(), cols());
    }
    std::span<double> row_span(std::size_t r) {
        return std::span<double>(values_).subspan(r * cols(), cols());
    }

    double item() const {
        if (size() != 1) {
            throw ContractError("item() on non-scalar tensor of shape " + shape_string(shape_));
        }
        return values_[0];
    }

    bool same_shape(const Tensor& other) const { return rows() == other.rows() && cols() == other.cols(); }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    void check_shape() const {
        for (std::size_t extent : shape_) {
            if (extent == 0) throw DimensionError("tensor shape " + shape_string(shape_) + " has a zero extent");
        }
    }

    Shape shape_;
    std::vector<double> values_;
};

inline std::string matrix_shape_string(const Tensor& t) {
    return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

} // namespace mivae::diff
