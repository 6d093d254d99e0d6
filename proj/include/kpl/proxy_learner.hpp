#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "kpl/numerics.hpp"

// Learns per-class proxies W (K x d, unit rows) by minimizing
//   (1/N) sum_i KL(Q_i || softmax(x_i W^T / tau))
// with projected full-batch momentum descent.
namespace kpl::learner {

struct LearnConfig {
  double tau_learn = 0.01;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::size_t max_epochs = 500;
  double loss_tolerance = 1e-7;

  void validate() const;
};

enum class StopReason { converged, max_epochs };
std::string_view to_string(StopReason r);

struct LearnTrace {
  // losses[0] is the loss at the initial weights; losses[e] after epoch e.
  std::vector<double> losses;
  std::size_t epochs_run = 0;
  StopReason stop_reason = StopReason::max_epochs;
};

struct LearnResult {
  Matrix weights;
  LearnTrace trace;
};

/// Softmax class distribution induced by the proxies: softmax(images w^T / tau).
Matrix class_distribution(const Matrix& w, const Matrix& images, double tau);

double loss(const Matrix& w, const Matrix& images, const Matrix& labels, double tau);

/// d loss / d w_j = (1/(N tau)) sum_i (P_ij - Q_ij) x_i
Matrix gradient(const Matrix& w, const Matrix& images, const Matrix& labels, double tau);

/// Starts from `init`; rows are re-normalized after every step. Stops when
/// |loss change| between consecutive epochs drops below cfg.loss_tolerance.
/// A non-finite loss is a NumericError.
LearnResult learn(const Matrix& images, const Matrix& labels, const Matrix& init,
                  const LearnConfig& cfg);

/// Per image, the index of the largest inner product with a proxy row.
std::vector<std::size_t> classify(const Matrix& images, const Matrix& w);

}  // namespace kpl::learner
