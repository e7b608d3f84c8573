#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gfs {

// Dense 64-bit real array, row-major, rank 1 or 2. Rank-1 {n} is a column
// vector for affine purposes; a scalar is {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    // Validating constructor: rejects NaN/Inf entries and shape/size mismatch.
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> values);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> values);  // {1, n}

    std::size_t numel() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;  // rank-1: n, rank-2: shape[0]
    std::size_t cols() const;  // rank-1: 1, rank-2: shape[1]

    bool is_scalar() const { return numel() == 1; }
    double scalar_value() const;
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<const double> view() const { return {data.data(), data.size()}; }
    std::span<double> view() { return {data.data(), data.size()}; }
    // Column b of a {D,B} matrix copied into out (length D).
    void copy_col(std::size_t b, std::span<double> out) const;
};

// C (+)= A * B, with A {m,k}, B {k,n} (B rank-1 treated as {k,1}).
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate);
// C (+)= A * B^T, with A {m,n}, B {k,n}  ->  {m,k}
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate);
// C (+)= A^T * B, with A {m,k}, B {m,n}  ->  {k,n}
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate);

}  // namespace gfs
