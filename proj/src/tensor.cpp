#include "dyadit/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "dyadit/threading.hpp"

namespace dyadit {

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(element_count(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = stddev * rng.normal();
    return t;
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<double> data) {
    if (element_count(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("from_data: shape does not match data length");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
    if (element_count(shape) != size())
        throw ShapeError("reshape: element count mismatch (" + shape_str() + ")");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

void Tensor::fill(double value) {
    for (auto& x : data_) x = value;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected 2-D tensor, got " + t.shape_str());
}

}  // namespace

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions disagree " + a.shape_str() + " x " + b.shape_str());
    if (out.dim(0) != m || out.dim(1) != n) throw ShapeError("matmul: bad output shape");

    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    parallel_for(
        0, m,
        [&](std::int64_t i) {
            double* c = C + i * n;
            const double* arow = A + i * k;
            for (std::int64_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = B + p * n;
                for (std::int64_t j = 0; j < n; ++j) c[j] += av * brow[j];
            }
        },
        std::max<std::int64_t>(1, 16384 / std::max<std::int64_t>(1, k * n / std::max<std::int64_t>(m, 1) + 1)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.dim(0), b.dim(1)});
    matmul_acc(a, b, out);
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    const std::int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul_tn: inner dimensions disagree " + a.shape_str() + " x " + b.shape_str());
    Tensor out({m, n});
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    // out[i][j] = sum_p A[p][i] * B[p][j]; sequential over p for determinism.
    parallel_for(0, m, [&](std::int64_t i) {
        double* c = C + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = A[p * m + i];
            const double* brow = B + p * n;
            for (std::int64_t j = 0; j < n; ++j) c[j] += av * brow[j];
        }
    });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError("matmul_nt: inner dimensions disagree " + a.shape_str() + " x " + b.shape_str());
    Tensor out({m, n});
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    parallel_for(0, m, [&](std::int64_t i) {
        const double* arow = A + i * k;
        double* c = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = B + j * k;
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[j] = acc;
        }
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

}  // namespace dyadit
