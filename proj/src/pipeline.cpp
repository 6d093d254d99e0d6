#include "kpl/pipeline.hpp"

#include <chrono>

#include "json.hpp"
#include "kpl/error.hpp"
#include "kpl/io.hpp"
#include "kpl/random.hpp"

namespace kpl {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::clip_baseline:
      return "clip_baseline";
    case Mode::description_baseline:
      return "description_baseline";
    case Mode::kpl_text:
      return "kpl_text";
    case Mode::kpl_full:
      return "kpl_full";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::clip_baseline, Mode::description_baseline, Mode::kpl_text, Mode::kpl_full}) {
    if (to_string(m) == name) return m;
  }
  raise<UsageError>("unknown mode '", name,
                    "' (expected clip_baseline, description_baseline, kpl_text or kpl_full)");
}

}  // namespace kpl

namespace kpl::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

bool uses_retrieval(Mode m) { return m == Mode::kpl_text || m == Mode::kpl_full; }

}  // namespace

ResolvedConfig resolve(const RunSpec& spec) {
  ResolvedConfig cfg;
  cfg.mode = spec.mode;
  const bool full = spec.mode == Mode::kpl_full;
  const bool retrieval = uses_retrieval(spec.mode);

  auto reject = [&](bool is_set, const char* option) {
    if (is_set) {
      raise<UsageError>("option ", option, " has no effect in mode ", to_string(spec.mode));
    }
  };
  if (!retrieval) reject(spec.k.has_value(), "--k");
  if (!full) {
    reject(spec.marginal.has_value(), "--marginal");
    reject(spec.algorithm.has_value(), "--algorithm");
    reject(spec.tau_ot.has_value(), "--tau-ot");
    reject(spec.max_iterations.has_value(), "--max-iterations");
    reject(spec.tolerance.has_value(), "--tolerance");
    reject(spec.tau_learn.has_value(), "--tau-learn");
    reject(spec.learning_rate.has_value(), "--lr");
    reject(spec.momentum.has_value(), "--momentum");
    reject(spec.epochs.has_value(), "--epochs");
    reject(spec.loss_tolerance.has_value(), "--loss-tolerance");
  }

  auto take = [&](const auto& opt, auto& dst, const char* key, bool relevant) {
    if (opt) {
      dst = *opt;
    } else if (relevant) {
      cfg.defaults_applied.emplace_back(key);
    }
  };
  take(spec.normalize, cfg.normalize, "normalize", true);
  take(spec.k, cfg.retrieval_k, "retrieval_k", retrieval);
  take(spec.algorithm, cfg.solver.algorithm, "solver.algorithm", full);
  take(spec.tau_ot, cfg.solver.tau_ot, "solver.tau_ot", full);
  take(spec.max_iterations, cfg.solver.max_iterations, "solver.max_iterations", full);
  take(spec.tolerance, cfg.solver.tolerance, "solver.tolerance", full);
  take(spec.tau_learn, cfg.learn.tau_learn, "learn.tau_learn", full);
  take(spec.learning_rate, cfg.learn.learning_rate, "learn.learning_rate", full);
  take(spec.momentum, cfg.learn.momentum, "learn.momentum", full);
  take(spec.epochs, cfg.learn.max_epochs, "learn.max_epochs", full);
  take(spec.loss_tolerance, cfg.learn.loss_tolerance, "learn.loss_tolerance", full);
  if (spec.marginal) {
    cfg.marginal_source = "file";
  } else if (full) {
    cfg.defaults_applied.emplace_back("marginal");
  }

  if (spec.mode == Mode::clip_baseline && !spec.names) {
    raise<UsageError>("mode clip_baseline requires class-name embeddings (--names)");
  }
  if (retrieval && cfg.retrieval_k < 1) raise<UsageError>("--k must be at least 1");
  cfg.solver.validate();
  cfg.learn.validate();
  return cfg;
}

RunInputs load_inputs(const RunSpec& spec, const ResolvedConfig& cfg) {
  RunInputs in;
  in.images = io::read_embeddings(spec.images);
  in.kb = io::read_knowledge_base(spec.kb, {spec.kb_sidecars, cfg.normalize});
  if (in.images.cols() != in.kb.dim()) {
    raise<DataError>(spec.images.string(), ": image dimension ", in.images.cols(),
                     " does not match knowledge base dimension ", in.kb.dim(), " of ",
                     spec.kb.string());
  }
  const std::size_t k = in.kb.num_classes();
  if (spec.names) {
    in.names = io::read_embeddings(*spec.names);
    if (in.names->rows() != k || in.names->cols() != in.kb.dim()) {
      raise<DataError>(spec.names->string(), ": class-name embeddings are ", in.names->rows(), "x",
                       in.names->cols(), ", expected ", k, "x", in.kb.dim());
    }
  }
  if (spec.labels) {
    in.gold = io::read_labels(*spec.labels, in.kb.class_names());
    if (in.gold->size() != in.images.rows()) {
      raise<DataError>(spec.labels->string(), ": ", in.gold->size(), " labels for ",
                       in.images.rows(), " images");
    }
  }
  if (spec.marginal) {
    in.marginal = io::read_marginal(*spec.marginal);
    if (in.marginal->size() != k) {
      raise<DataError>(spec.marginal->string(), ": marginal has ", in.marginal->size(),
                       " entries, expected ", k, " classes");
    }
  }
  return in;
}

KplStages pseudo_label_stages(const Matrix& images, const retrieval::KnowledgeBase& kb,
                              std::size_t k, const ot::SolverConfig& solver,
                              const ot::ClassMarginal& marginal) {
  KplStages s;
  s.selection = retrieval::retrieve(images, kb, k);
  s.text_proxies = retrieval::build_text_proxies(kb, s.selection);
  s.similarity = multiply_transposed(images, s.text_proxies.w);
  s.plan = ot::solve(s.similarity, solver, marginal);
  s.pseudo_labels = ot::pseudo_labels(s.plan);
  return s;
}

RunReport run(const RunInputs& inputs, const ResolvedConfig& cfg) {
  const auto start = Clock::now();
  const retrieval::KnowledgeBase& kb = inputs.kb;
  if (inputs.images.rows() > 0 && inputs.images.cols() != kb.dim()) {
    raise<DataError>("image dimension ", inputs.images.cols(),
                     " does not match knowledge base dimension ", kb.dim());
  }
  const Matrix images = cfg.normalize && inputs.images.rows() > 0
                            ? l2_normalize_rows(inputs.images)
                            : inputs.images;

  RunReport report;
  report.config = cfg;
  report.num_images = images.rows();
  report.dim = kb.dim();
  report.class_names = kb.class_names();

  Matrix proxies;
  switch (cfg.mode) {
    case Mode::clip_baseline: {
      if (!inputs.names) raise<UsageError>("mode clip_baseline requires class-name embeddings");
      const Matrix names = cfg.normalize ? l2_normalize_rows(*inputs.names) : *inputs.names;
      if (names.rows() != kb.num_classes() || names.cols() != kb.dim()) {
        raise<DataError>("class-name embeddings are ", names.rows(), "x", names.cols(),
                         ", expected ", kb.num_classes(), "x", kb.dim());
      }
      proxies = retrieval::name_proxies(names).w;
      break;
    }
    case Mode::description_baseline:
      proxies = retrieval::description_mean_proxies(kb).w;
      break;
    case Mode::kpl_text: {
      const auto selection = retrieval::retrieve(images, kb, cfg.retrieval_k);
      proxies = retrieval::build_text_proxies(kb, selection).w;
      report.retrieval.emplace();
      for (const auto& c : selection.classes) report.retrieval->push_back(c.indices);
      break;
    }
    case Mode::kpl_full: {
      const ot::ClassMarginal marginal =
          inputs.marginal ? *inputs.marginal : ot::ClassMarginal::uniform(kb.num_classes());
      if (marginal.size() != kb.num_classes()) {
        raise<DataError>("marginal has ", marginal.size(), " entries, expected ",
                         kb.num_classes());
      }
      const KplStages stages =
          pseudo_label_stages(images, kb, cfg.retrieval_k, cfg.solver, marginal);
      report.retrieval.emplace();
      for (const auto& c : stages.selection.classes) report.retrieval->push_back(c.indices);
      report.solver = SolverDiagnostics{
          stages.plan.iterations_used, stages.plan.final_row_violation,
          stages.plan.final_col_violation, stages.plan.converged,
          ot::entropic_objective(stages.plan, stages.similarity, cfg.solver.tau_ot)};

      const auto learned =
          learner::learn(images, stages.pseudo_labels, stages.text_proxies.w, cfg.learn);
      report.learn = LearnSummary{learned.trace.epochs_run, learned.trace.stop_reason,
                                  learned.trace.losses.front(), learned.trace.losses.back()};
      proxies = learned.weights;
      break;
    }
  }

  report.predictions = learner::classify(images, proxies);
  if (inputs.gold) {
    if (inputs.gold->size() != images.rows()) {
      raise<DataError>(inputs.gold->size(), " gold labels for ", images.rows(), " images");
    }
    if (!inputs.gold->empty()) {
      report.accuracy = accuracy(report.predictions, *inputs.gold, kb.num_classes());
    }
  }
  report.wall_time_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

RunReport run(const RunSpec& spec) {
  const auto start = Clock::now();
  const ResolvedConfig cfg = resolve(spec);
  RunReport report = run(load_inputs(spec, cfg), cfg);
  report.wall_time_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

AccuracyReport accuracy(const std::vector<std::size_t>& predicted,
                        const std::vector<std::size_t>& gold, std::size_t num_classes) {
  if (predicted.size() != gold.size()) {
    raise<UsageError>("accuracy over ", predicted.size(), " predictions and ", gold.size(),
                      " gold labels");
  }
  if (gold.empty()) raise<UsageError>("accuracy of an empty label vector");
  std::vector<std::size_t> hits(num_classes, 0);
  std::vector<std::size_t> totals(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= num_classes) {
      raise<UsageError>("gold label ", gold[i], " out of range for ", num_classes, " classes");
    }
    ++totals[gold[i]];
    if (predicted[i] == gold[i]) {
      ++hits[gold[i]];
      ++correct;
    }
  }
  AccuracyReport out;
  out.overall = static_cast<double>(correct) / static_cast<double>(gold.size());
  out.per_class.resize(num_classes);
  for (std::size_t j = 0; j < num_classes; ++j) {
    if (totals[j] > 0) {
      out.per_class[j] = static_cast<double>(hits[j]) / static_cast<double>(totals[j]);
    }
  }
  return out;
}

Matrix generate_instance(InstanceKind kind, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0) raise<UsageError>("instance needs at least one row and column");
  Rng rng(seed);
  if (kind == InstanceKind::uniform) return uniform_matrix(rng, rows, cols);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = (rng.next() >> 63) ? 1.0 : -1.0;
  return m;
}

std::vector<BenchRow> bench_solvers(const Matrix& m, const std::vector<ot::SolverConfig>& configs,
                                    const ot::ClassMarginal& marginal) {
  std::vector<BenchRow> rows;
  rows.reserve(configs.size());
  for (const auto& cfg : configs) {
    BenchRow row;
    row.config = cfg;
    const auto start = Clock::now();
    try {
      const ot::TransportPlan plan = ot::solve(m, cfg, marginal);
      row.status = "ok";
      row.iterations = plan.iterations_used;
      row.row_violation = plan.final_row_violation;
      row.col_violation = plan.final_col_violation;
      row.converged = plan.converged;
      row.objective = ot::entropic_objective(plan, m, cfg.tau_ot);
    } catch (const NumericError& e) {
      row.status = "numeric_overflow";
      row.message = e.what();
    }
    row.wall_time_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string bench_to_json(const std::vector<BenchRow>& rows, bool include_timing) {
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["algorithm"] = ot::to_string(r.config.algorithm);
    j["tau_ot"] = r.config.tau_ot;
    j["max_iterations"] = r.config.max_iterations;
    j["tolerance"] = r.config.tolerance;
    j["status"] = r.status;
    if (r.status == "ok") {
      j["iterations"] = r.iterations;
      j["row_violation"] = r.row_violation;
      j["col_violation"] = r.col_violation;
      j["converged"] = r.converged;
      j["objective"] = r.objective;
    } else {
      j["message"] = r.message;
    }
    if (include_timing) j["wall_time_seconds"] = r.wall_time_seconds;
    table.push_back(std::move(j));
  }
  return table.dump(2) + "\n";
}

}  // namespace kpl::pipeline
