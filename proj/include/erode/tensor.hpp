#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "erode/errors.hpp"

namespace erode {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense n-dimensional array of doubles with row-major flat storage.
// Shape is metadata over a single Eigen array; all math goes through the
// flat view (`a()`) or through Eigen::Map matrix views for 2-d operands.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled
    Tensor(Shape shape, Eigen::ArrayXd data);
    Tensor(Shape shape, std::initializer_list<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Eigen::ArrayXd& a() { return data_; }
    const Eigen::ArrayXd& a() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[i]; }
    double operator[](std::int64_t i) const { return data_[i]; }

    // Row-major 2-d matrix view; requires rank 2.
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat() const;

    // View of the same data under a different shape (element count must match).
    Tensor reshaped(Shape shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const { return data_.isFinite().all(); }

private:
    Shape shape_;
    Eigen::ArrayXd data_;
};

// Throws DimensionError naming `what` unless the two shapes match.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

inline Tensor operator+(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "operator+");
    return Tensor(x.shape(), x.a() + y.a());
}
inline Tensor operator-(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "operator-");
    return Tensor(x.shape(), x.a() - y.a());
}
inline Tensor operator*(const Tensor& x, double s) { return Tensor(x.shape(), x.a() * s); }
inline Tensor operator*(double s, const Tensor& x) { return x * s; }

Tensor hadamard(const Tensor& x, const Tensor& y);

// Elementwise sign with sign(0) = 0.
Tensor sign(const Tensor& x);

// max |x_i - y_i| over all entries.
double linf_distance(const Tensor& x, const Tensor& y);

double min_value(const Tensor& x);
double max_value(const Tensor& x);
double sum_value(const Tensor& x);
double mean_value(const Tensor& x);
double l1_norm(const Tensor& x);

bool bit_equal(const Tensor& x, const Tensor& y);

}  // namespace erode
