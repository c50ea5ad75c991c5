#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "concm/error.hpp"

namespace concm {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::ShapeError,
            "matrix data length " + std::to_string(data_.size()) + " != " +
                std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      require(r.size() == cols_, ErrorKind::ShapeError, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  /// Stack equal-length vectors as rows.
  static Matrix from_rows(std::span<const Vector> rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == m.cols_, ErrorKind::ShapeError, "ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  /// Stack equal-length vectors as columns.
  static Matrix from_columns(std::span<const Vector> cols) {
    if (cols.empty()) return {};
    Matrix m(cols.front().size(), cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      require(cols[j].size() == m.rows_, ErrorKind::ShapeError, "ragged columns");
      m.set_column(j, cols[j]);
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  Vector column(std::size_t j) const {
    Vector v(rows_);
    for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
    return v;
  }
  void set_column(std::size_t j, std::span<const double> v) {
    require(v.size() == rows_, ErrorKind::ShapeError, "column length mismatch");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
  }
  void set_row(std::size_t i, std::span<const double> v) {
    require(v.size() == cols_, ErrorKind::ShapeError, "row length mismatch");
    std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.same_shape(b), ErrorKind::ShapeError,
          std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

// --- products -------------------------------------------------------------

/// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorKind::ShapeError,
          "matmul: " + shape_str(a) + " * " + shape_str(b));
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i).data();
    const double* ai = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

/// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorKind::ShapeError,
          "matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  Matrix c(a.cols(), b.cols());
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.row(p).data();
    const double* bp = b.row(p).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a);

/// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorKind::ShapeError,
          "matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  return matmul(a, transpose(b));  // row-streaming kernel vectorizes, a dot-product loop does not
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// --- elementwise ----------------------------------------------------------

inline Matrix& operator+=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "+=");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
  return a;
}
inline Matrix& operator-=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "-=");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] -= bd[i];
  return a;
}
inline Matrix& operator*=(Matrix& a, double s) {
  for (double& x : a.data()) x *= s;
  return a;
}
inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

inline double trace(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) s += a(i, i);
  return s;
}

/// I - (1/n) 1 1^T
inline Matrix centering_matrix(std::size_t n) {
  Matrix m(n, n, -1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) m(i, i) += 1.0;
  return m;
}

// --- vectors --------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a), nb = norm2(b);
  require(na > 0.0 && nb > 0.0, ErrorKind::DegenerateInput, "cosine of zero vector");
  return dot(a, b) / (na * nb);
}

inline Vector normalized(std::span<const double> a) {
  const double n = norm2(a);
  require(n > 0.0 && std::isfinite(n), ErrorKind::DegenerateInput, "cannot normalize zero vector");
  Vector out(a.begin(), a.end());
  for (double& x : out) x /= n;
  return out;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace concm
