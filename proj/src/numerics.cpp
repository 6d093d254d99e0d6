#include "kpl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kpl/error.hpp"

namespace kpl {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    raise<UsageError>("matrix data length ", data_.size(), " does not match ", rows_, "x",
                      cols_);
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) raise<UsageError>("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) raise<UsageError>("log_sum_exp of an empty vector");
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

Matrix softmax_rows(const Matrix& m, double tau) {
  if (!(tau > 0.0)) raise<UsageError>("softmax temperature must be positive, got ", tau);
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    const double hi = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - hi) / tau);
      total += o[j];
    }
    for (double& x : o) x /= total;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) raise<UsageError>("dot of vectors of length ", a.size(), " and ", b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double n = norm(r);
    if (n == 0.0) raise<DataError>("cannot normalize zero row ", i);
    for (double& x : r) x /= n;
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    raise<UsageError>("cosine of vectors of length ", a.size(), " and ", b.size());
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) raise<DataError>("cosine similarity with a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector kl_rows(const Matrix& p, const Matrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    raise<UsageError>("kl_rows shape mismatch: ", p.rows(), "x", p.cols(), " vs ", q.rows(), "x",
                      q.cols());
  }
  Vector out(p.rows(), 0.0);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double pij = p(i, j);
      if (pij == 0.0) continue;
      const double qij = q(i, j);
      if (!(qij > 0.0)) {
        raise<DataError>("KL support violation at (", i, ", ", j, "): p=", pij, " but q=", qij);
      }
      s += pij * (std::log(pij) - std::log(qij));
    }
    // Rounding can push an exact-zero divergence slightly negative.
    out[i] = std::max(s, 0.0);
  }
  return out;
}

Matrix multiply_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    raise<UsageError>("inner dimension mismatch: ", a.cols(), " vs ", b.cols());
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) raise<UsageError>("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

}  // namespace kpl
