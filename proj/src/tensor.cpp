#include "gfs/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gfs {

namespace {
std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
}
}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.data.assign(shape_numel(shape), 0.0);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t;
    t.data.assign(shape_numel(shape), v);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        std::ostringstream oss;
        oss << "Tensor::from_data: shape holds " << shape_numel(shape) << " entries but "
            << values.size() << " values given";
        throw std::invalid_argument(oss.str());
    }
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("Tensor::from_data: non-finite entry rejected");
        }
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::row(std::vector<double> values) {
    std::size_t n = values.size();
    return from_data({1, n}, std::move(values));
}

std::size_t Tensor::numel() const { return shape_numel(shape); }

std::size_t Tensor::rows() const { return shape.empty() ? 0 : shape[0]; }

std::size_t Tensor::cols() const { return shape.size() < 2 ? 1 : shape[1]; }

double Tensor::scalar_value() const {
    if (!is_scalar()) {
        throw std::invalid_argument("Tensor::scalar_value on non-scalar tensor " + shape_str());
    }
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream oss;
    oss << "{";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) oss << ",";
        oss << shape[i];
    }
    oss << "}";
    return oss.str();
}

void Tensor::copy_col(std::size_t b, std::span<double> out) const {
    const std::size_t r = rows(), c = cols();
    for (std::size_t i = 0; i < r; ++i) out[i] = data[i * c + b];
}

void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
    const std::size_t m = a.rows(), k = a.cols();
    const std::size_t n = b.cols();
    if (!accumulate) {
        c = Tensor::zeros(b.rank() == 1 && n == 1 ? std::vector<std::size_t>{m}
                                                  : std::vector<std::size_t>{m, n});
    }
    const double* __restrict A = a.data.data();
    const double* __restrict B = b.data.data();
    double* __restrict C = c.data.data();

    // Two output rows share each loaded B row; accumulators live in a local
    // buffer so the j-loops stay in registers.
    constexpr std::size_t kMaxCols = 256;
    if (n <= kMaxCols) {
        double acc0[kMaxCols], acc1[kMaxCols];
        std::size_t i = 0;
        for (; i + 1 < m; i += 2) {
            for (std::size_t j = 0; j < n; ++j) acc0[j] = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc1[j] = 0.0;
            const double* a0 = A + i * k;
            const double* a1 = A + (i + 1) * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double v0 = a0[p], v1 = a1[p];
                const double* __restrict brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) {
                    acc0[j] += v0 * brow[j];
                    acc1[j] += v1 * brow[j];
                }
            }
            double* c0 = C + i * n;
            double* c1 = C + (i + 1) * n;
            for (std::size_t j = 0; j < n; ++j) c0[j] += acc0[j];
            for (std::size_t j = 0; j < n; ++j) c1[j] += acc1[j];
        }
        if (i < m) {
            for (std::size_t j = 0; j < n; ++j) acc0[j] = 0.0;
            const double* a0 = A + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double v0 = a0[p];
                const double* __restrict brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) acc0[j] += v0 * brow[j];
            }
            double* c0 = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c0[j] += acc0[j];
        }
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* __restrict brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
    const std::size_t m = a.rows(), n = a.cols();
    const std::size_t k = b.rows();
    if (!accumulate) c = Tensor::zeros({m, k});

    // B^T into a scratch buffer so the inner loop runs along contiguous
    // rows; the reduction order over j is unchanged.
    thread_local std::vector<double> scratch;
    scratch.resize(n * k);
    const double* __restrict B = b.data.data();
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) scratch[j * k + p] = B[p * n + j];
    }

    const double* __restrict A = a.data.data();
    const double* __restrict BT = scratch.data();
    double* __restrict C = c.data.data();
    constexpr std::size_t kMaxCols = 256;
    if (k <= kMaxCols) {
        double acc0[kMaxCols], acc1[kMaxCols];
        std::size_t i = 0;
        for (; i + 1 < m; i += 2) {
            for (std::size_t p = 0; p < k; ++p) acc0[p] = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc1[p] = 0.0;
            const double* a0 = A + i * n;
            const double* a1 = A + (i + 1) * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double v0 = a0[j], v1 = a1[j];
                const double* __restrict brow = BT + j * k;
                for (std::size_t p = 0; p < k; ++p) {
                    acc0[p] += v0 * brow[p];
                    acc1[p] += v1 * brow[p];
                }
            }
            double* c0 = C + i * k;
            double* c1 = C + (i + 1) * k;
            for (std::size_t p = 0; p < k; ++p) c0[p] += acc0[p];
            for (std::size_t p = 0; p < k; ++p) c1[p] += acc1[p];
        }
        if (i < m) {
            for (std::size_t p = 0; p < k; ++p) acc0[p] = 0.0;
            const double* a0 = A + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double v0 = a0[j];
                const double* __restrict brow = BT + j * k;
                for (std::size_t p = 0; p < k; ++p) acc0[p] += v0 * brow[p];
            }
            double* c0 = C + i * k;
            for (std::size_t p = 0; p < k; ++p) c0[p] += acc0[p];
        }
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * n;
        double* crow = C + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = arow[j];
            const double* __restrict brow = BT + j * k;
            for (std::size_t p = 0; p < k; ++p) crow[p] += v * brow[p];
        }
    }
}

void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
    const std::size_t m = a.rows(), k = a.cols();
    const std::size_t n = b.cols();
    if (!accumulate) c = Tensor::zeros({k, n});
    const double* __restrict A = a.data.data();
    const double* __restrict B = b.data.data();
    double* __restrict C = c.data.data();
    for (std::size_t p = 0; p < m; ++p) {
        const double* __restrict arow = A + p * k;
        const double* __restrict brow = B + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = arow[i];
            double* __restrict crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace gfs
