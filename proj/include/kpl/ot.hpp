#pragma once

#include <cstddef>
#include <functional>
#include <string_view>

#include "kpl/numerics.hpp"

// Entropic optimal transport between N images (row mass 1/N each) and K
// classes (column mass q_j): maximize <M, P> + tau * H(P). The unique optimum
// has the form diag(u) exp(M / tau) diag(v); all solvers here reach it by
// rescaling rows and columns of exp(M / tau).
namespace kpl::ot {

enum class Algorithm { sinkhorn_linear, sinkhorn_log, stable_greenkhorn };

std::string_view to_string(Algorithm a);
/// Parses the snake_case algorithm name; UsageError otherwise.
Algorithm parse_algorithm(std::string_view name);

// Target column mass over classes. Always sums to one.
class ClassMarginal {
 public:
  /// Validates nonnegative entries summing to 1 within 1e-9.
  explicit ClassMarginal(Vector q);
  static ClassMarginal uniform(std::size_t k);
  /// Rescales nonnegative weights to sum exactly to one. Negative entries or
  /// a zero total are DataErrors.
  static ClassMarginal normalized(Vector weights);

  std::size_t size() const noexcept { return q_.size(); }
  double operator[](std::size_t j) const noexcept { return q_[j]; }
  const Vector& values() const noexcept { return q_; }

 private:
  Vector q_;
};

struct SolverConfig {
  double tau_ot = 0.01;
  std::size_t max_iterations = 100000;
  double tolerance = 1e-6;
  Algorithm algorithm = Algorithm::stable_greenkhorn;

  void validate() const;
};

struct TransportPlan {
  Matrix log_p;  // N x K, log domain
  double row_target = 0.0;
  Vector col_target;
  std::size_t iterations_used = 0;
  double final_row_violation = 0.0;
  double final_col_violation = 0.0;
  bool converged = false;

  std::size_t rows() const noexcept { return log_p.rows(); }
  std::size_t cols() const noexcept { return log_p.cols(); }
  /// exp(log_p)
  Matrix plan() const;
};

struct Violations {
  double row_linf = 0.0;
  double col_linf = 0.0;
};

/// Alternating full row/column normalization on exp(m / tau). One iteration is
/// one row sweep followed by one column sweep. Throws NumericError if
/// exp(m / tau) or any intermediate leaves the representable range.
TransportPlan sinkhorn_linear(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q);

/// Same fixed point as sinkhorn_linear with every normalization done by
/// log-sum-exp on the log plan.
TransportPlan sinkhorn_log(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q);

/// Greedy log-domain Greenkhorn. Each iteration rescales the single row or
/// column whose mass deviates most (absolute difference) from its target;
/// a row is chosen only when its deviation strictly exceeds the worst column
/// deviation, and the lowest index wins ties within rows or columns.
TransportPlan stable_greenkhorn(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q);

struct GreenkhornStep {
  std::size_t iteration = 0;  // 1-based
  bool is_row = false;
  std::size_t index = 0;
  double target = 0.0;
};
using GreenkhornObserver = std::function<void(const GreenkhornStep&, const Matrix& log_p)>;

/// As above, invoking `observer` after every line update.
TransportPlan stable_greenkhorn(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q,
                                const GreenkhornObserver& observer);

/// Dispatches on cfg.algorithm.
TransportPlan solve(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q);

Violations marginal_violations(const TransportPlan& plan);

/// <M, P> + tau * H(P), H(P) = -sum P ln P, 0 ln 0 = 0.
double entropic_objective(const TransportPlan& plan, const Matrix& m, double tau);

/// Each plan row divided by its own mass. A zero-mass row is a DataError.
Matrix pseudo_labels(const TransportPlan& plan);

}  // namespace kpl::ot
