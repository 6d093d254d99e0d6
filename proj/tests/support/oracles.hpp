#pragma once

// Test-only reference computations. Nothing here calls into the library's
// solver or learner code paths; they exist to check those paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "kpl/numerics.hpp"

namespace kpl::oracle {

using Real = long double;

inline Real lse(const std::vector<Real>& v) {
  Real hi = -INFINITY;
  for (Real x : v) hi = std::max(hi, x);
  if (std::isinf(hi) && hi < 0) return hi;
  Real s = 0;
  for (Real x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

// Plain log-domain Sinkhorn in extended precision: full row then full column
// normalization, `sweeps` times. Returns exp(log plan) in double.
inline Matrix log_sinkhorn(const Matrix& m, double tau, const std::vector<double>& q,
                           std::size_t sweeps) {
  const std::size_t n = m.rows();
  const std::size_t k = m.cols();
  std::vector<std::vector<Real>> lp(n, std::vector<Real>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) lp[i][j] = static_cast<Real>(m(i, j)) / tau;
  }
  const Real log_row = -std::log(static_cast<Real>(n));
  std::vector<Real> col(n);
  for (std::size_t s = 0; s < sweeps; ++s) {
    for (auto& row : lp) {
      const Real shift = log_row - lse(row);
      for (Real& x : row) x += shift;
    }
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < n; ++i) col[i] = lp[i][j];
      const Real shift = std::log(static_cast<Real>(q[j])) - lse(col);
      for (std::size_t i = 0; i < n; ++i) lp[i][j] += shift;
    }
  }
  Matrix out(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out(i, j) = static_cast<double>(std::exp(lp[i][j]));
  }
  return out;
}

// <M, P> + tau * H(P) in extended precision on a linear-domain plan.
inline double objective(const Matrix& p, const Matrix& m, double tau) {
  Real lin = 0, ent = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const Real x = p(i, j);
      lin += static_cast<Real>(m(i, j)) * x;
      if (x > 0) ent -= x * std::log(x);
    }
  }
  return static_cast<double>(lin + static_cast<Real>(tau) * ent);
}

// Central finite differences of f at w, one coordinate at a time.
inline Matrix central_differences(const std::function<double(const Matrix&)>& f, const Matrix& w,
                                  double h) {
  Matrix g(w.rows(), w.cols());
  Matrix probe = w;
  for (std::size_t t = 0; t < w.size(); ++t) {
    const double saved = probe.data()[t];
    probe.data()[t] = saved + h;
    const double up = f(probe);
    probe.data()[t] = saved - h;
    const double down = f(probe);
    probe.data()[t] = saved;
    g.data()[t] = (up - down) / (2.0 * h);
  }
  return g;
}

// Full sort of (score, index) pairs: descending score, ascending index.
inline std::vector<std::size_t> sorted_top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> pairs;
  for (std::size_t i = 0; i < scores.size(); ++i) pairs.emplace_back(scores[i], i);
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < k; ++r) out.push_back(pairs[r].second);
  return out;
}

// Direct per-entry evaluation of the softmax-KL proxy loss in extended precision.
inline double proxy_loss(const Matrix& w, const Matrix& x, const Matrix& q, double tau) {
  Real total = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<Real> logits(w.rows());
    for (std::size_t j = 0; j < w.rows(); ++j) {
      Real s = 0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += static_cast<Real>(x(i, c)) * w(j, c);
      logits[j] = s / tau;
    }
    const Real z = lse(logits);
    for (std::size_t j = 0; j < w.rows(); ++j) {
      const Real qij = q(i, j);
      if (qij > 0) total += qij * (std::log(qij) - (logits[j] - z));
    }
  }
  return static_cast<double>(total / static_cast<Real>(x.rows()));
}

}  // namespace kpl::oracle
