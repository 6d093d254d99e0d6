#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace kpl {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Entries are expected to be finite unless
// the matrix holds log-domain values, in which case -inf is allowed.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// log(sum(exp(v))) with max-shift. Returns -inf iff every entry is -inf.
/// Throws UsageError on empty input.
double log_sum_exp(std::span<const double> v);

/// Row-wise softmax of m / tau, max-shifted per row.
Matrix softmax_rows(const Matrix& m, double tau);

/// Scales every row to unit Euclidean norm. A zero row is a DataError.
Matrix l2_normalize_rows(const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// a.b / (|a||b|). Zero vectors are a DataError.
double cosine(std::span<const double> a, std::span<const double> b);

/// Per-row KL(p || q) with 0 ln 0 = 0. Support violations are a DataError.
Vector kl_rows(const Matrix& p, const Matrix& q);

/// a * b^T, i.e. out(i, j) = dot(a.row(i), b.row(j)).
Matrix multiply_transposed(const Matrix& a, const Matrix& b);

/// Index of the largest entry; lowest index wins ties. v must be nonempty.
std::size_t argmax(std::span<const double> v);

}  // namespace kpl
