#include "core/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dfkd {

int64_t Tensor::shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::runtime_error("tensor: negative dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(std::initializer_list<int> shape, double fill)
    : Tensor(std::vector<int>(shape), fill) {}

Tensor Tensor::scalar(double v) {
    Tensor t(std::vector<int>{});
    t.data_.assign(1, v);
    return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::runtime_error("tensor: value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_to_string(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
}

namespace {
inline size_t idx2(const std::vector<int>& s, int i, int j) {
    return static_cast<size_t>(i) * s[1] + j;
}
inline size_t idx3(const std::vector<int>& s, int i, int j, int k) {
    return (static_cast<size_t>(i) * s[1] + j) * s[2] + k;
}
inline size_t idx4(const std::vector<int>& s, int i, int j, int k, int l) {
    return ((static_cast<size_t>(i) * s[1] + j) * s[2] + k) * s[3] + l;
}
} // namespace

double& Tensor::at(int i) { return data_[static_cast<size_t>(i)]; }
double& Tensor::at(int i, int j) { return data_[idx2(shape_, i, j)]; }
double& Tensor::at(int i, int j, int k) { return data_[idx3(shape_, i, j, k)]; }
double& Tensor::at(int i, int j, int k, int l) { return data_[idx4(shape_, i, j, k, l)]; }
double Tensor::at(int i) const { return data_[static_cast<size_t>(i)]; }
double Tensor::at(int i, int j) const { return data_[idx2(shape_, i, j)]; }
double Tensor::at(int i, int j, int k) const { return data_[idx3(shape_, i, j, k)]; }
double Tensor::at(int i, int j, int k, int l) const { return data_[idx4(shape_, i, j, k, l)]; }

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

} // namespace dfkd
