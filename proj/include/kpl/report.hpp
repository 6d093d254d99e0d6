#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kpl/ot.hpp"
#include "kpl/proxy_learner.hpp"

namespace kpl {

enum class Mode { clip_baseline, description_baseline, kpl_text, kpl_full };
std::string_view to_string(Mode m);
Mode parse_mode(std::string_view name);

// Every knob of a run after defaults were filled in.
struct ResolvedConfig {
  Mode mode = Mode::kpl_full;
  std::size_t retrieval_k = 3;
  bool normalize = true;
  std::string marginal_source = "uniform";
  ot::SolverConfig solver;
  learner::LearnConfig learn;
  std::vector<std::string> defaults_applied;
};

struct AccuracyReport {
  double overall = 0.0;
  // Per gold class; empty when the class never occurs in the gold labels.
  std::vector<std::optional<double>> per_class;
};

struct SolverDiagnostics {
  std::size_t iterations = 0;
  double row_violation = 0.0;
  double col_violation = 0.0;
  bool converged = false;
  double objective = 0.0;
};

struct LearnSummary {
  std::size_t epochs_run = 0;
  learner::StopReason stop_reason = learner::StopReason::max_epochs;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct RunReport {
  ResolvedConfig config;
  std::size_t num_images = 0;
  std::size_t dim = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> predictions;
  std::optional<AccuracyReport> accuracy;
  // Selected description indices per class (kpl modes only).
  std::optional<std::vector<std::vector<std::size_t>>> retrieval;
  std::optional<SolverDiagnostics> solver;
  std::optional<LearnSummary> learn;
  double wall_time_seconds = 0.0;
};

}  // namespace kpl
