#include "erode/tensor.hpp"

#include <cstring>
#include <sstream>

namespace erode {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Eigen::ArrayXd::Zero(shape_numel(shape_));
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw DimensionError("shape " + shape_str(shape_) + " does not match element count " +
                             std::to_string(data_.size()));
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(values.size()))
        throw DimensionError("shape " + shape_str(shape_) + " does not match initializer of size " +
                             std::to_string(values.size()));
    data_.resize(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) data_[i++] = v;
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = Eigen::ArrayXd::Constant(shape_numel(t.shape_), value);
    return t;
}

Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Tensor::mat() {
    if (rank() != 2) throw DimensionError("matrix view requires rank 2, got shape " + shape_str(shape_));
    return {data_.data(), shape_[0], shape_[1]};
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Tensor::mat() const {
    if (rank() != 2) throw DimensionError("matrix view requires rank 2, got shape " + shape_str(shape_));
    return {data_.data(), shape_[0], shape_[1]};
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() == b.shape()) return;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    std::size_t axis = 0;
    while (axis < sa.size() && axis < sb.size() && sa[axis] == sb[axis]) ++axis;
    throw DimensionError(std::string(what) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " differ at axis " + std::to_string(axis));
}

Tensor hadamard(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "hadamard");
    return Tensor(x.shape(), x.a() * y.a());
}

Tensor sign(const Tensor& x) {
    return Tensor(x.shape(), x.a().unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
}

double linf_distance(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "linf_distance");
    if (x.size() == 0) return 0.0;
    return (x.a() - y.a()).abs().maxCoeff();
}

double min_value(const Tensor& x) { return x.a().minCoeff(); }
double max_value(const Tensor& x) { return x.a().maxCoeff(); }
double sum_value(const Tensor& x) { return x.a().sum(); }
double mean_value(const Tensor& x) { return x.a().mean(); }
double l1_norm(const Tensor& x) { return x.a().abs().sum(); }

bool bit_equal(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) return false;
    if (x.size() == 0) return true;
    return std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
}

}  // namespace erode
