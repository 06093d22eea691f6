#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace dfkd {

// Dense row-major double tensor. Rank is anything from 0 (scalar) to 4;
// everything in this codebase fits in (N, C, H, W) or smaller.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::initializer_list<int> shape, double fill = 0.0);

    static Tensor scalar(double v);
    static Tensor from_vector(std::vector<int> shape, std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int size(int dim) const { return shape_[static_cast<size_t>(dim)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Multi-index accessors for cold paths and tests. Hot loops index raw
    // pointers directly.
    double& at(int i);
    double& at(int i, int j);
    double& at(int i, int j, int k);
    double& at(int i, int j, int k, int l);
    double at(int i) const;
    double at(int i, int j) const;
    double at(int i, int j, int k) const;
    double at(int i, int j, int k, int l) const;

    void fill(double v);
    void zero() { fill(0.0); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    std::string shape_str() const;

    static int64_t shape_numel(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

} // namespace dfkd
