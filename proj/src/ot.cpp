#include "kpl/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kpl/error.hpp"

namespace kpl::ot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Drift control for the incrementally maintained line masses.
constexpr std::size_t kRefreshPeriod = 1000;

void check_problem(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q) {
  cfg.validate();
  if (m.rows() == 0 || m.cols() == 0) {
    raise<UsageError>("transport problem needs at least one row and column, got ", m.rows(), "x",
                      m.cols());
  }
  if (m.cols() != q.size()) {
    raise<UsageError>("similarity matrix has ", m.cols(), " columns but the class marginal has ",
                      q.size(), " entries");
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (!std::isfinite(m(i, j))) raise<DataError>("non-finite similarity at (", i, ", ", j, ")");
    }
  }
}

TransportPlan make_plan(Matrix log_p, const ClassMarginal& q, std::size_t iterations) {
  TransportPlan plan;
  plan.row_target = 1.0 / static_cast<double>(log_p.rows());
  plan.col_target = q.values();
  plan.log_p = std::move(log_p);
  plan.iterations_used = iterations;
  const Violations v = marginal_violations(plan);
  plan.final_row_violation = v.row_linf;
  plan.final_col_violation = v.col_linf;
  return plan;
}

Matrix scaled(const Matrix& m, double tau) {
  Matrix out = m;
  for (double& x : out.data()) x /= tau;
  return out;
}

double column_lse(const Matrix& lp, std::size_t j, Vector& scratch) {
  scratch.resize(lp.rows());
  for (std::size_t i = 0; i < lp.rows(); ++i) scratch[i] = lp(i, j);
  return log_sum_exp(scratch);
}

double lse2(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == kNegInf) return kNegInf;
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

[[noreturn]] void linear_overflow(std::size_t i, std::size_t j, double exponent, const char* stage) {
  raise<NumericError>("linear-domain Sinkhorn left the floating-point range at entry (", i, ", ",
                      j, ") during ", stage, " (log-magnitude ", exponent,
                      "); use sinkhorn_log or stable_greenkhorn instead");
}

}  // namespace

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sinkhorn_linear:
      return "sinkhorn_linear";
    case Algorithm::sinkhorn_log:
      return "sinkhorn_log";
    case Algorithm::stable_greenkhorn:
      return "stable_greenkhorn";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a :
       {Algorithm::sinkhorn_linear, Algorithm::sinkhorn_log, Algorithm::stable_greenkhorn}) {
    if (to_string(a) == name) return a;
  }
  raise<UsageError>("unknown algorithm '", name,
                    "' (expected sinkhorn_linear, sinkhorn_log or stable_greenkhorn)");
}

ClassMarginal::ClassMarginal(Vector q) : q_(std::move(q)) {
  if (q_.empty()) raise<UsageError>("class marginal must have at least one entry");
  double total = 0.0;
  for (std::size_t j = 0; j < q_.size(); ++j) {
    if (!(q_[j] >= 0.0) || !std::isfinite(q_[j])) {
      raise<DataError>("class marginal entry ", j, " is negative or non-finite: ", q_[j]);
    }
    total += q_[j];
  }
  if (std::abs(total - 1.0) > 1e-9) raise<DataError>("class marginal sums to ", total, ", not 1");
}

ClassMarginal ClassMarginal::uniform(std::size_t k) {
  if (k == 0) raise<UsageError>("uniform marginal over zero classes");
  return ClassMarginal(Vector(k, 1.0 / static_cast<double>(k)));
}

ClassMarginal ClassMarginal::normalized(Vector weights) {
  if (weights.empty()) raise<DataError>("class marginal must have at least one entry");
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!(weights[j] >= 0.0) || !std::isfinite(weights[j])) {
      raise<DataError>("class marginal entry ", j, " is negative or non-finite: ", weights[j]);
    }
    total += weights[j];
  }
  if (!(total > 0.0)) raise<DataError>("class marginal weights sum to zero");
  for (double& w : weights) w /= total;
  return ClassMarginal(std::move(weights));
}

void SolverConfig::validate() const {
  if (!(tau_ot > 0.0) || !std::isfinite(tau_ot)) {
    raise<UsageError>("tau_ot must be positive, got ", tau_ot);
  }
  if (max_iterations < 1) raise<UsageError>("max_iterations must be at least 1");
  if (!(tolerance >= 0.0)) raise<UsageError>("tolerance must be nonnegative, got ", tolerance);
}

Matrix TransportPlan::plan() const {
  Matrix p = log_p;
  for (double& x : p.data()) x = std::exp(x);
  return p;
}

Violations marginal_violations(const TransportPlan& plan) {
  Violations v;
  const Matrix& lp = plan.log_p;
  for (std::size_t i = 0; i < lp.rows(); ++i) {
    v.row_linf = std::max(v.row_linf, std::abs(std::exp(log_sum_exp(lp.row(i))) - plan.row_target));
  }
  Vector scratch;
  for (std::size_t j = 0; j < lp.cols(); ++j) {
    const double mass = std::exp(column_lse(lp, j, scratch));
    v.col_linf = std::max(v.col_linf, std::abs(mass - plan.col_target[j]));
  }
  return v;
}

TransportPlan sinkhorn_linear(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q) {
  check_problem(m, cfg, q);
  const std::size_t n = m.rows();
  const std::size_t k = m.cols();
  const double row_target = 1.0 / static_cast<double>(n);

  Matrix p(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double e = m(i, j) / cfg.tau_ot;
      p(i, j) = std::exp(e);
      if (!std::isfinite(p(i, j)) || p(i, j) == 0.0) linear_overflow(i, j, e, "kernel construction");
    }
  }

  // Entries may legitimately become zero only in columns with zero target.
  auto check_entry = [&](std::size_t i, std::size_t j, const char* stage) {
    const double x = p(i, j);
    if (!std::isfinite(x) || (x == 0.0 && q[j] > 0.0)) {
      linear_overflow(i, j, x == 0.0 ? -std::numeric_limits<double>::infinity() : x, stage);
    }
  };

  std::size_t sweeps = 0;
  Vector col_sum(k);
  Vector col_scale(k);
  while (sweeps < cfg.max_iterations) {
    ++sweeps;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = p.row(i);
      double s = 0.0;
      for (double x : r) s += x;
      if (!(s > 0.0) || !std::isfinite(s)) linear_overflow(i, 0, s, "row normalization");
      const double scale = row_target / s;
      for (std::size_t j = 0; j < k; ++j) {
        r[j] *= scale;
        check_entry(i, j, "row normalization");
      }
    }
    std::fill(col_sum.begin(), col_sum.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) col_sum[j] += p(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (q[j] == 0.0) {
        col_scale[j] = 0.0;
        continue;
      }
      if (!(col_sum[j] > 0.0) || !std::isfinite(col_sum[j])) {
        linear_overflow(0, j, col_sum[j], "column normalization");
      }
      col_scale[j] = q[j] / col_sum[j];
    }
    double row_viol = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        p(i, j) *= col_scale[j];
        check_entry(i, j, "column normalization");
        s += p(i, j);
      }
      row_viol = std::max(row_viol, std::abs(s - row_target));
    }
    // Columns are exact up to rounding right after the column sweep.
    if (row_viol <= cfg.tolerance) {
      std::fill(col_sum.begin(), col_sum.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) col_sum[j] += p(i, j);
      }
      double col_viol = 0.0;
      for (std::size_t j = 0; j < k; ++j) col_viol = std::max(col_viol, std::abs(col_sum[j] - q[j]));
      if (col_viol <= cfg.tolerance) break;
    }
  }

  Matrix log_p = p;
  for (double& x : log_p.data()) x = std::log(x);
  TransportPlan plan = make_plan(std::move(log_p), q, sweeps);
  plan.converged = plan.final_row_violation <= cfg.tolerance &&
                   plan.final_col_violation <= cfg.tolerance;
  return plan;
}

TransportPlan sinkhorn_log(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q) {
  check_problem(m, cfg, q);
  const std::size_t n = m.rows();
  const std::size_t k = m.cols();
  const double log_row_target = -std::log(static_cast<double>(n));
  const double row_target = 1.0 / static_cast<double>(n);

  Matrix lp = scaled(m, cfg.tau_ot);
  for (std::size_t j = 0; j < k; ++j) {
    if (q[j] == 0.0) {
      for (std::size_t i = 0; i < n; ++i) lp(i, j) = kNegInf;
    }
  }

  Vector scratch;
  std::size_t sweeps = 0;
  while (sweeps < cfg.max_iterations) {
    ++sweeps;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = lp.row(i);
      const double shift = log_row_target - log_sum_exp(r);
      for (double& x : r) x += shift;
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (q[j] == 0.0) continue;
      const double shift = std::log(q[j]) - column_lse(lp, j, scratch);
      for (std::size_t i = 0; i < n; ++i) lp(i, j) += shift;
    }
    double row_viol = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      row_viol = std::max(row_viol, std::abs(std::exp(log_sum_exp(lp.row(i))) - row_target));
    }
    if (row_viol <= cfg.tolerance) {
      double col_viol = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        col_viol = std::max(col_viol, std::abs(std::exp(column_lse(lp, j, scratch)) - q[j]));
      }
      if (col_viol <= cfg.tolerance) break;
    }
  }

  TransportPlan plan = make_plan(std::move(lp), q, sweeps);
  plan.converged = plan.final_row_violation <= cfg.tolerance &&
                   plan.final_col_violation <= cfg.tolerance;
  return plan;
}

TransportPlan stable_greenkhorn(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q) {
  return stable_greenkhorn(m, cfg, q, GreenkhornObserver{});
}

TransportPlan stable_greenkhorn(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q,
                                const GreenkhornObserver& observer) {
  check_problem(m, cfg, q);
  const std::size_t n = m.rows();
  const std::size_t k = m.cols();
  const double row_target = 1.0 / static_cast<double>(n);
  const double log_row_target = -std::log(static_cast<double>(n));

  Matrix lp = scaled(m, cfg.tau_ot);
  std::vector<char> active(k, 1);
  for (std::size_t j = 0; j < k; ++j) {
    if (q[j] == 0.0) {
      active[j] = 0;
      for (std::size_t i = 0; i < n; ++i) lp(i, j) = kNegInf;
    }
  }

  // Log-masses of every row and column, kept in sync with lp incrementally.
  Vector row_lse(n);
  Vector col_lse(k, kNegInf);
  Vector scratch;
  auto refresh_row = [&](std::size_t i) { row_lse[i] = log_sum_exp(lp.row(i)); };
  auto refresh_col = [&](std::size_t j) { col_lse[j] = column_lse(lp, j, scratch); };
  auto refresh_all = [&] {
    for (std::size_t i = 0; i < n; ++i) refresh_row(i);
    for (std::size_t j = 0; j < k; ++j) {
      if (active[j]) refresh_col(j);
    }
  };

  // New log-mass of a line after one of its entries moved from old_v to new_v.
  // Removing a dominant entry by subtraction loses precision, so those lines
  // are recomputed from scratch.
  auto replaced = [](double line, double old_v, double new_v, auto&& recompute) {
    const double w = std::exp(old_v - line);
    if (!(w <= 0.5)) return recompute();
    return lse2(line + std::log1p(-w), new_v);
  };

  refresh_all();

  std::size_t iterations = 0;
  bool converged = false;
  bool confirmed = false;
  while (true) {
    std::size_t best_row = 0;
    double row_max = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::abs(std::exp(row_lse[i]) - row_target);
      if (d > row_max) {
        row_max = d;
        best_row = i;
      }
    }
    std::size_t best_col = 0;
    double col_max = -1.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (!active[j]) continue;
      const double d = std::abs(std::exp(col_lse[j]) - q[j]);
      if (d > col_max) {
        col_max = d;
        best_col = j;
      }
    }
    if (std::isnan(row_max) || std::isnan(col_max)) {
      raise<InternalError>("stable_greenkhorn produced NaN marginals at iteration ", iterations);
    }
    if (col_max < 0.0) col_max = 0.0;  // every column inactive is impossible, but keep it defined

    if (row_max <= cfg.tolerance && col_max <= cfg.tolerance) {
      if (confirmed) {
        converged = true;
        break;
      }
      // Confirm against freshly computed masses before stopping.
      refresh_all();
      confirmed = true;
      continue;
    }
    confirmed = false;
    if (iterations >= cfg.max_iterations) break;
    ++iterations;

    GreenkhornStep step;
    step.iteration = iterations;
    if (row_max > col_max) {
      const std::size_t r = best_row;
      const double delta = log_row_target - row_lse[r];
      auto line = lp.row(r);
      for (std::size_t j = 0; j < k; ++j) {
        if (!active[j]) continue;
        const double old_v = line[j];
        line[j] += delta;
        col_lse[j] = replaced(col_lse[j], old_v, line[j], [&] {
          return column_lse(lp, j, scratch);
        });
      }
      refresh_row(r);
      step.is_row = true;
      step.index = r;
      step.target = row_target;
    } else {
      const std::size_t c = best_col;
      const double delta = std::log(q[c]) - col_lse[c];
      for (std::size_t i = 0; i < n; ++i) {
        const double old_v = lp(i, c);
        lp(i, c) += delta;
        row_lse[i] = replaced(row_lse[i], old_v, lp(i, c), [&] { return log_sum_exp(lp.row(i)); });
      }
      refresh_col(c);
      step.is_row = false;
      step.index = c;
      step.target = q[c];
    }
    if (observer) observer(step, lp);
    if (iterations % kRefreshPeriod == 0) refresh_all();
  }

  TransportPlan plan = make_plan(std::move(lp), q, iterations);
  plan.converged = converged;
  return plan;
}

TransportPlan solve(const Matrix& m, const SolverConfig& cfg, const ClassMarginal& q) {
  switch (cfg.algorithm) {
    case Algorithm::sinkhorn_linear:
      return sinkhorn_linear(m, cfg, q);
    case Algorithm::sinkhorn_log:
      return sinkhorn_log(m, cfg, q);
    case Algorithm::stable_greenkhorn:
      return stable_greenkhorn(m, cfg, q);
  }
  raise<InternalError>("unhandled algorithm");
}

double entropic_objective(const TransportPlan& plan, const Matrix& m, double tau) {
  if (m.rows() != plan.rows() || m.cols() != plan.cols()) {
    raise<UsageError>("objective shape mismatch: plan ", plan.rows(), "x", plan.cols(),
                      ", similarity ", m.rows(), "x", m.cols());
  }
  double linear = 0.0;
  double entropy = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double lp = plan.log_p(i, j);
      if (lp == kNegInf) continue;
      const double p = std::exp(lp);
      linear += m(i, j) * p;
      entropy -= p * lp;
    }
  }
  return linear + tau * entropy;
}

Matrix pseudo_labels(const TransportPlan& plan) {
  Matrix out(plan.rows(), plan.cols());
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto r = plan.log_p.row(i);
    const double mass = log_sum_exp(r);
    if (mass == kNegInf) raise<DataError>("transport plan row ", i, " has zero mass");
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = std::exp(r[j] - mass);
  }
  return out;
}

}  // namespace kpl::ot
