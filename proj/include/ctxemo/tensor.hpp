#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxemo/errors.hpp"

namespace ctxemo {

/// Dense row-major matrix of doubles. Vectors are 1 x n matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, value) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data size does not match " + shape_string());
        }
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_) throw ShapeError("ragged rows in Matrix::from_rows");
            std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Matrix& operator*=(double s) noexcept {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    void require_same_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o)) throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_string() + " vs " + o.shape_string());
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix zeros_like(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
    Matrix c(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* bk = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

// C += A^T * B
inline void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
        throw ShapeError("matmul_at_b: " + a.shape_string() + "^T * " + b.shape_string() + " -> " + c.shape_string());
    }
    const std::size_t n = b.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* br = b.row(r).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ari = a(r, i);
            if (ari == 0.0) continue;
            double* ci = c.row(i).data();
            for (std::size_t j = 0; j < n; ++j) ci[j] += ari * br[j];
        }
    }
}

inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    Matrix c(a.cols(), b.cols());
    matmul_at_b_acc(a, b, c);
    return c;
}

// C = A * B^T
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_a_bt: " + a.shape_string() + " * " + b.shape_string() + "^T");
    Matrix c(a.rows(), b.rows());
    const std::size_t inner = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.row(j).data();
            double s = 0.0;
            for (std::size_t k = 0; k < inner; ++k) s += ai[k] * bj[k];
            c(i, j) = s;
        }
    }
    return c;
}

// Adds a 1 x n bias row to every row of m.
inline void add_row_bias(Matrix& m, const Matrix& bias) {
    if (bias.rows() != 1 || bias.cols() != m.cols()) throw ShapeError("bias " + bias.shape_string() + " for " + m.shape_string());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias(0, c);
    }
}

// bias_grad += column sums of g
inline void accumulate_column_sums(const Matrix& g, Matrix& bias_grad) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < g.cols(); ++c) bias_grad(0, c) += row[c];
    }
}

/// Numerically stable in-place softmax over a span.
inline void softmax_inplace(std::span<double> x) {
    if (x.empty()) return;
    const double mx = *std::max_element(x.begin(), x.end());
    double sum = 0.0;
    for (double& v : x) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : x) v /= sum;
}

inline std::vector<double> softmax(std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    softmax_inplace(out);
    return out;
}

/// log(sum(exp(x))) computed stably.
inline double log_sum_exp(std::span<const double> x) {
    const double mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - mx);
    return mx + std::log(s);
}

using Rng = std::mt19937_64;

// Dropout is active only in train mode.
enum class Mode { train, inference };

inline void fill_normal(Matrix& m, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : m.values()) v = dist(rng);
}

/// Inverted-dropout keep mask: entries are 0 or 1/(1-rate).
inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    Matrix mask(rows, cols, 1.0);
    if (rate <= 0.0) return mask;
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (double& v : mask.values()) v = keep(rng) ? scale : 0.0;
    return mask;
}

inline void hadamard_inplace(Matrix& m, const Matrix& mask) {
    auto a = m.values();
    auto b = mask.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
}

/// A named reference to one learnable tensor.
struct NamedTensor {
    std::string name;
    Matrix* tensor;
};

struct ConstNamedTensor {
    std::string name;
    const Matrix* tensor;
};

/// Parameter containers expose their tensors in a fixed order.
template <class P>
concept ParameterSet = requires(P& p, const P& cp) {
    { p.tensors() } -> std::same_as<std::vector<NamedTensor>>;
    { cp.tensors() } -> std::same_as<std::vector<ConstNamedTensor>>;
};

template <ParameterSet P>
P zeros_like_params(const P& p) {
    P z = p;
    for (auto& t : z.tensors()) t.tensor->fill(0.0);
    return z;
}

template <ParameterSet P>
void accumulate_params(P& into, const P& from, double scale = 1.0) {
    auto a = into.tensors();
    auto b = from.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto dst = a[i].tensor->values();
        auto src = b[i].tensor->values();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
    }
}

}  // namespace ctxemo
