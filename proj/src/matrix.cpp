#include "tart/matrix.hpp"

#include <cmath>
#include <string>

namespace tart {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::vector<double> values) {
    std::size_t n = values.size();
    return Matrix(1, n, std::move(values));
}

Matrix Matrix::from_external(std::size_t rows, std::size_t cols, std::vector<double> data) {
    Matrix m(rows, cols, std::move(data));
    if (!m.all_finite()) {
        throw FormatError("matrix contains non-finite entries");
    }
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Matrix::fill(double v) {
    for (double& x : data_) x = v;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    if (!same_shape(other)) throw ShapeError("operator+=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) +
                         " and " + std::to_string(b.rows()) + " do not match");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i]));
    return m;
}

double row_norm(const Matrix& a, std::size_t r) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a.at(r, j) * a.at(r, j);
    return std::sqrt(s);
}

}  // namespace tart
