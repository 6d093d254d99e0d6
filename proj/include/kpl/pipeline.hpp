#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpl/numerics.hpp"
#include "kpl/ot.hpp"
#include "kpl/proxy_learner.hpp"
#include "kpl/report.hpp"
#include "kpl/retrieval.hpp"

namespace kpl::pipeline {

// File-level description of a run. Unset optionals take documented defaults
// and are listed in the report's defaults_applied.
struct RunSpec {
  Mode mode = Mode::kpl_full;
  std::filesystem::path images;
  std::filesystem::path kb;
  std::map<std::string, std::filesystem::path> kb_sidecars;
  std::optional<std::filesystem::path> names;
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> marginal;

  std::optional<std::size_t> k;
  std::optional<bool> normalize;
  std::optional<ot::Algorithm> algorithm;
  std::optional<double> tau_ot;
  std::optional<std::size_t> max_iterations;
  std::optional<double> tolerance;
  std::optional<double> tau_learn;
  std::optional<double> learning_rate;
  std::optional<double> momentum;
  std::optional<std::size_t> epochs;
  std::optional<double> loss_tolerance;
};

/// Fills defaults, records which were applied and rejects options the mode
/// does not use (UsageError).
ResolvedConfig resolve(const RunSpec& spec);

// In-memory inputs of a run.
struct RunInputs {
  Matrix images;
  retrieval::KnowledgeBase kb;
  std::optional<Matrix> names;
  std::optional<std::vector<std::size_t>> gold;
  std::optional<ot::ClassMarginal> marginal;
};

/// Reads every source named by the spec; errors name the offending file.
RunInputs load_inputs(const RunSpec& spec, const ResolvedConfig& cfg);

/// Stage chain for the configured mode:
///   clip_baseline         name proxies -> classify
///   description_baseline  all-description mean proxies -> classify
///   kpl_text              retrieval -> retrieved-mean proxies -> classify
///   kpl_full              kpl_text proxies -> similarity M -> OT -> pseudo-labels
///                         -> proxy learning -> classify
RunReport run(const RunInputs& inputs, const ResolvedConfig& cfg);
RunReport run(const RunSpec& spec);

/// Overall and per-gold-class fraction of exact matches.
AccuracyReport accuracy(const std::vector<std::size_t>& predicted,
                        const std::vector<std::size_t>& gold, std::size_t num_classes);

// Intermediate products of the kpl stages, exposed for tools and bindings.
struct KplStages {
  retrieval::RetrievalResult selection;
  retrieval::TextProxies text_proxies;
  Matrix similarity;  // images x text proxies^T
  ot::TransportPlan plan;
  Matrix pseudo_labels;
};

/// Retrieval, similarity and OT pseudo-labeling on already-normalized inputs.
KplStages pseudo_label_stages(const Matrix& images, const retrieval::KnowledgeBase& kb,
                              std::size_t k, const ot::SolverConfig& solver,
                              const ot::ClassMarginal& marginal);

// Solver benchmarking.

enum class InstanceKind { uniform, stress };

/// Seeded rows x cols similarity matrix: entries U[-1, 1] (uniform) or
/// random signs +-1 (stress).
Matrix generate_instance(InstanceKind kind, std::size_t rows, std::size_t cols, std::uint64_t seed);

struct BenchRow {
  ot::SolverConfig config;
  std::string status;  // "ok" or "numeric_overflow"
  std::string message;
  std::size_t iterations = 0;
  double row_violation = 0.0;
  double col_violation = 0.0;
  bool converged = false;
  double objective = 0.0;
  double wall_time_seconds = 0.0;
};

std::vector<BenchRow> bench_solvers(const Matrix& m, const std::vector<ot::SolverConfig>& configs,
                                    const ot::ClassMarginal& marginal);

/// Fixed-order JSON table; wall times omitted when include_timing is false.
std::string bench_to_json(const std::vector<BenchRow>& rows, bool include_timing = true);

}  // namespace kpl::pipeline
