#include "kpl/proxy_learner.hpp"

#include <cmath>

#include "kpl/error.hpp"

namespace kpl::learner {

namespace {

void check_shapes(const Matrix& w, const Matrix& images, const Matrix& labels) {
  if (images.cols() != w.cols()) {
    raise<UsageError>("image dimension ", images.cols(), " does not match proxy dimension ",
                      w.cols());
  }
  if (labels.rows() != images.rows() || labels.cols() != w.rows()) {
    raise<UsageError>("labels are ", labels.rows(), "x", labels.cols(), ", expected ",
                      images.rows(), "x", w.rows());
  }
  if (images.rows() == 0) raise<UsageError>("proxy learning needs at least one image");
}

// Re-normalizes the rows that moved in this step; untouched rows keep their
// exact values.
void normalize_moved_rows(Matrix& w, const Matrix& velocity, std::size_t epoch, double lr) {
  for (std::size_t j = 0; j < w.rows(); ++j) {
    bool moved = false;
    for (double v : velocity.row(j)) moved = moved || v != 0.0;
    if (!moved) continue;
    auto r = w.row(j);
    const double n = norm(r);
    if (n == 0.0 || !std::isfinite(n)) {
      raise<NumericError>("proxy row ", j, " degenerated (norm ", n, ") at epoch ", epoch,
                          " with learning rate ", lr);
    }
    for (double& x : r) x /= n;
  }
}

}  // namespace

void LearnConfig::validate() const {
  if (!(tau_learn > 0.0)) raise<UsageError>("tau_learn must be positive, got ", tau_learn);
  if (!(learning_rate >= 0.0)) {
    raise<UsageError>("learning rate must be nonnegative, got ", learning_rate);
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    raise<UsageError>("momentum must lie in [0, 1), got ", momentum);
  }
  if (!(loss_tolerance >= 0.0)) {
    raise<UsageError>("loss tolerance must be nonnegative, got ", loss_tolerance);
  }
}

std::string_view to_string(StopReason r) {
  return r == StopReason::converged ? "converged" : "max_epochs";
}

Matrix class_distribution(const Matrix& w, const Matrix& images, double tau) {
  return softmax_rows(multiply_transposed(images, w), tau);
}

double loss(const Matrix& w, const Matrix& images, const Matrix& labels, double tau) {
  check_shapes(w, images, labels);
  // KL against the log-softmax directly, so an underflowed probability shows
  // up as a non-finite loss instead of a support violation.
  const Matrix logits = multiply_transposed(images, w);
  Vector z(w.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = logits(i, j) / tau;
    const double lse = log_sum_exp(z);
    double kl = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double q = labels(i, j);
      if (q > 0.0) kl += q * (std::log(q) - (z[j] - lse));
    }
    if (kl < 0.0) kl = 0.0;
    total += kl;
  }
  return total / static_cast<double>(images.rows());
}

Matrix gradient(const Matrix& w, const Matrix& images, const Matrix& labels, double tau) {
  check_shapes(w, images, labels);
  const Matrix p = class_distribution(w, images, tau);
  const double scale = 1.0 / (static_cast<double>(images.rows()) * tau);
  Matrix g(w.rows(), w.cols());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    const auto x = images.row(i);
    for (std::size_t j = 0; j < w.rows(); ++j) {
      const double coef = (p(i, j) - labels(i, j)) * scale;
      if (coef == 0.0) continue;
      auto gj = g.row(j);
      for (std::size_t c = 0; c < x.size(); ++c) gj[c] += coef * x[c];
    }
  }
  return g;
}

LearnResult learn(const Matrix& images, const Matrix& labels, const Matrix& init,
                  const LearnConfig& cfg) {
  cfg.validate();
  check_shapes(init, images, labels);

  LearnResult result{init, {}};
  Matrix& w = result.weights;
  LearnTrace& trace = result.trace;
  Matrix velocity(w.rows(), w.cols());

  auto checked_loss = [&](std::size_t epoch) {
    const double l = loss(w, images, labels, cfg.tau_learn);
    if (!std::isfinite(l)) {
      raise<NumericError>("non-finite loss at epoch ", epoch, " with learning rate ",
                          cfg.learning_rate);
    }
    return l;
  };

  double previous = checked_loss(0);
  trace.losses.push_back(previous);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const Matrix g = gradient(w, images, labels, cfg.tau_learn);
    auto v = velocity.data();
    auto wd = w.data();
    const auto gd = g.data();
    for (std::size_t t = 0; t < wd.size(); ++t) {
      v[t] = cfg.momentum * v[t] - cfg.learning_rate * gd[t];
      wd[t] += v[t];
    }
    normalize_moved_rows(w, velocity, epoch, cfg.learning_rate);

    const double current = checked_loss(epoch);
    trace.losses.push_back(current);
    trace.epochs_run = epoch;
    if (std::abs(previous - current) < cfg.loss_tolerance) {
      trace.stop_reason = StopReason::converged;
      return result;
    }
    previous = current;
  }
  trace.stop_reason = StopReason::max_epochs;
  return result;
}

std::vector<std::size_t> classify(const Matrix& images, const Matrix& w) {
  if (images.rows() > 0 && images.cols() != w.cols()) {
    raise<UsageError>("image dimension ", images.cols(), " does not match proxy dimension ",
                      w.cols());
  }
  std::vector<std::size_t> labels(images.rows());
  if (images.rows() == 0) return labels;
  if (w.rows() == 0) raise<UsageError>("classification needs at least one proxy");
  Vector scores(w.rows());
  for (std::size_t i = 0; i < images.rows(); ++i) {
    for (std::size_t j = 0; j < w.rows(); ++j) scores[j] = dot(images.row(i), w.row(j));
    labels[i] = argmax(scores);
  }
  return labels;
}

}  // namespace kpl::learner
