#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "dyadit/errors.hpp"
#include "dyadit/rng.hpp"

namespace dyadit {

// Dense row-major tensor of doubles with value semantics. Rank is small (<= 3 in
// practice); most ops treat tensors as matrices [rows, cols] or flat arrays.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::initializer_list<std::int64_t> shape) : Tensor(std::vector<std::int64_t>(shape)) {}

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::int64_t> shape, double value);
    static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0);
    static Tensor from_data(std::vector<std::int64_t> shape, std::vector<double> data);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 2-D / 3-D accessors (unchecked beyond debug builds).
    double& at(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    std::int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::int64_t cols() const { return rank() < 2 ? 1 : shape_[1]; }

    Tensor reshaped(std::vector<std::int64_t> shape) const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    void fill(double value);
    bool all_finite() const;
    double max_abs() const;

private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
};

// Checks shape equality, throws ShapeError mentioning `what` otherwise.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// C = A x B for 2-D tensors, [m,k] x [k,n] -> [m,n]. Row-parallel, inner loop
// sequential per output row, so results are independent of thread count.
Tensor matmul(const Tensor& a, const Tensor& b);
// C += A x B into a preallocated output.
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out);
// C = A^T x B, [k,m]^T x [k,n] -> [m,n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C = A x B^T, [m,k] x [n,k]^T -> [m,n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

}  // namespace dyadit
