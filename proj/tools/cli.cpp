#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kpl/error.hpp"
#include "kpl/fixture.hpp"
#include "kpl/io.hpp"
#include "kpl/pipeline.hpp"
#include "kpl/retrieval.hpp"

#ifndef KPL_VERSION
#define KPL_VERSION "0.0.0-dev"
#endif

namespace kpl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// An option whose "was it given" bit matters, so that defaults can be told
// apart from explicit values.
template <typename T>
struct Flag {
  T value{};
  CLI::Option* option = nullptr;

  std::optional<T> get() const {
    return option != nullptr && option->count() > 0 ? std::optional<T>(value) : std::nullopt;
  }
};

template <typename T>
CLI::Option* add(CLI::App* app, const std::string& name, Flag<T>& flag, const std::string& help) {
  flag.option = app->add_option(name, flag.value, help);
  return flag.option;
}

std::map<std::string, fs::path> parse_sidecars(const std::vector<std::string>& specs) {
  std::map<std::string, fs::path> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      raise<UsageError>("--kb-embeddings expects NAME=PATH, got '", s, "'");
    }
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

// Options shared by the stages that read images and a knowledge base.
struct InputFlags {
  std::string images;
  std::string kb;
  std::vector<std::string> kb_embeddings;
  Flag<bool> normalize;

  void attach(CLI::App* app, bool need_kb) {
    app->add_option("--images", images, "Image embeddings (EMB1)")->required();
    auto* kb_opt = app->add_option("--kb", kb, "Knowledge base JSON");
    if (need_kb) kb_opt->required();
    app->add_option("--kb-embeddings", kb_embeddings,
                    "Sidecar EMB1 embeddings for a class without inline embeddings, NAME=PATH "
                    "(repeatable)");
    add(app, "--normalize", normalize, "L2-normalize image and text embeddings on load (default true)");
  }

  bool normalized() const { return normalize.get().value_or(true); }

  Matrix load_images() const {
    Matrix m = io::read_embeddings(images);
    if (normalized() && m.rows() > 0) m = l2_normalize_rows(m);
    return m;
  }

  retrieval::KnowledgeBase load_kb() const {
    return io::read_knowledge_base(kb, {parse_sidecars(kb_embeddings), normalized()});
  }
};

struct SolverFlags {
  Flag<std::string> algorithm;
  Flag<double> tau_ot;
  Flag<std::size_t> max_iterations;
  Flag<double> tolerance;
  std::string marginal;

  void attach(CLI::App* app, bool with_marginal = true) {
    add(app, "--algorithm", algorithm,
        "OT solver: sinkhorn_linear, sinkhorn_log or stable_greenkhorn (default stable_greenkhorn)");
    add(app, "--tau-ot", tau_ot, "Entropic OT temperature (default 0.01)");
    add(app, "--max-iterations", max_iterations, "Solver iteration cap (default 100000)");
    add(app, "--tolerance", tolerance, "Marginal violation tolerance (default 1e-6)");
    if (with_marginal) {
      app->add_option("--marginal", marginal, "Class marginal JSON array (default uniform)");
    }
  }

  ot::SolverConfig config() const {
    ot::SolverConfig cfg;
    if (auto a = algorithm.get()) cfg.algorithm = ot::parse_algorithm(*a);
    if (auto v = tau_ot.get()) cfg.tau_ot = *v;
    if (auto v = max_iterations.get()) cfg.max_iterations = *v;
    if (auto v = tolerance.get()) cfg.tolerance = *v;
    cfg.validate();
    return cfg;
  }
};

struct LearnFlags {
  Flag<double> tau_learn;
  Flag<double> lr;
  Flag<double> momentum;
  Flag<std::size_t> epochs;
  Flag<double> loss_tolerance;

  void attach(CLI::App* app) {
    add(app, "--tau-learn", tau_learn, "Softmax temperature of proxy learning (default 0.01)");
    add(app, "--lr", lr, "Learning rate (default 0.02)");
    add(app, "--momentum", momentum, "Momentum in [0, 1) (default 0.9)");
    add(app, "--epochs", epochs, "Maximum epochs (default 500)");
    add(app, "--loss-tolerance", loss_tolerance,
        "Stop when the epoch-to-epoch loss change is below this (default 1e-7)");
  }

  learner::LearnConfig config() const {
    learner::LearnConfig cfg;
    if (auto v = tau_learn.get()) cfg.tau_learn = *v;
    if (auto v = lr.get()) cfg.learning_rate = *v;
    if (auto v = momentum.get()) cfg.momentum = *v;
    if (auto v = epochs.get()) cfg.max_epochs = *v;
    if (auto v = loss_tolerance.get()) cfg.loss_tolerance = *v;
    cfg.validate();
    return cfg;
  }
};

std::vector<std::string> index_names(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < k; ++j) names.push_back(std::to_string(j));
  return names;
}

fs::path predictions_path_for(const fs::path& report) {
  fs::path p = report;
  p.replace_extension(".csv");
  return p;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-enhanced zero-shot classification over precomputed embeddings", "kpl"};
  app.set_version_flag("--version", std::string("kpl ") + KPL_VERSION);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // pipeline
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run a full classification mode end to end");
  std::string mode;
  InputFlags pipeline_in;
  std::string names_path, labels_path, report_path, csv_path;
  Flag<std::size_t> pipeline_k;
  SolverFlags pipeline_solver;
  LearnFlags pipeline_learn;
  pipeline_cmd->add_option("--mode", mode,
                           "clip_baseline, description_baseline, kpl_text or kpl_full")
      ->required();
  pipeline_in.attach(pipeline_cmd, true);
  pipeline_cmd->add_option("--names", names_path, "Class-name embeddings (EMB1, K x d)");
  pipeline_cmd->add_option("--labels", labels_path, "Gold labels, one per line (optional)");
  add(pipeline_cmd, "--k", pipeline_k, "Descriptions retrieved per class (default 3)");
  pipeline_solver.attach(pipeline_cmd);
  pipeline_learn.attach(pipeline_cmd);
  pipeline_cmd->add_option("--out,--output", report_path, "Report JSON path")->required();
  pipeline_cmd->add_option("--predictions", csv_path,
                           "Predictions CSV path (default: report path with .csv extension)");

  // retrieve
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Select top-k descriptions per class");
  InputFlags retrieve_in;
  Flag<std::size_t> retrieve_k;
  std::string retrieve_out, proxies_out;
  retrieve_in.attach(retrieve_cmd, true);
  add(retrieve_cmd, "--k", retrieve_k, "Descriptions retrieved per class (default 3)");
  retrieve_cmd->add_option("--out,--output", retrieve_out, "Selection JSON path")->required();
  retrieve_cmd->add_option("--proxies-out", proxies_out, "Also write the text proxies (EMB1)");

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Compute OT pseudo-labels from retrieved text proxies");
  InputFlags plan_in;
  Flag<std::size_t> plan_k;
  SolverFlags plan_solver;
  std::string plan_out;
  plan_in.attach(plan_cmd, true);
  add(plan_cmd, "--k", plan_k, "Descriptions retrieved per class (default 3)");
  plan_solver.attach(plan_cmd);
  plan_cmd->add_option("--out,--output", plan_out, "Pseudo-label matrix path (EMB1, N x K)")
      ->required();

  // learn
  auto* learn_cmd = app.add_subcommand("learn", "Learn multimodal proxies from pseudo-labels");
  InputFlags learn_in;
  std::string pseudo_path, init_path, learn_out;
  LearnFlags learn_flags;
  learn_in.attach(learn_cmd, false);
  learn_cmd->add_option("--pseudo-labels", pseudo_path, "Pseudo-label matrix (EMB1, N x K)")
      ->required();
  learn_cmd->add_option("--init", init_path, "Initial proxies (EMB1, K x d)")->required();
  learn_flags.attach(learn_cmd);
  learn_cmd->add_option("--out,--output", learn_out, "Learned proxies path (EMB1)")->required();

  // classify
  auto* classify_cmd = app.add_subcommand("classify", "Assign each image to its nearest proxy");
  InputFlags classify_in;
  std::string proxies_path, classify_out;
  classify_in.attach(classify_cmd, false);
  classify_cmd->add_option("--proxies", proxies_path, "Proxies (EMB1, K x d)")->required();
  classify_cmd->add_option("--out,--output", classify_out, "Predictions CSV path")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a predictions CSV against gold labels");
  std::string eval_pred, eval_labels, eval_kb, eval_out;
  eval_cmd->add_option("--predictions", eval_pred, "Predictions CSV")->required();
  eval_cmd->add_option("--labels", eval_labels, "Gold labels")->required();
  eval_cmd->add_option("--kb", eval_kb, "Knowledge base JSON (class names)")->required();
  eval_cmd->add_option("--out,--output", eval_out, "Accuracy JSON path")->required();

  // bench-ot
  auto* bench_cmd = app.add_subcommand("bench-ot", "Compare OT solvers on one instance");
  std::size_t bench_rows = 64, bench_cols = 8;
  std::string instance = "uniform", matrix_path, bench_out, bench_marginal;
  std::vector<std::string> algorithms;
  Flag<std::uint64_t> bench_seed;
  double bench_tau = 0.05;
  std::size_t bench_iters = 100000;
  double bench_tol = 1e-6;
  bench_cmd->add_option("--rows", bench_rows, "Generated instance rows")->capture_default_str();
  bench_cmd->add_option("--cols", bench_cols, "Generated instance columns")->capture_default_str();
  bench_cmd->add_option("--instance", instance,
                        "uniform (entries U[-1,1]) or stress (entries +-1)")
      ->check(CLI::IsMember({"uniform", "stress"}))
      ->capture_default_str();
  bench_cmd->add_option("--matrix", matrix_path, "Similarity matrix (EMB1) instead of a generated one");
  add(bench_cmd, "--seed", bench_seed, "Seed of the generated instance (required without --matrix)");
  bench_cmd->add_option("--tau,--tau-ot", bench_tau, "Entropic OT temperature")->capture_default_str();
  bench_cmd->add_option("--algorithm", algorithms, "Solver to run (repeatable; default all)");
  bench_cmd->add_option("--max-iterations", bench_iters, "Iteration cap")->capture_default_str();
  bench_cmd->add_option("--tolerance", bench_tol, "Marginal tolerance")->capture_default_str();
  bench_cmd->add_option("--marginal", bench_marginal, "Class marginal JSON (default uniform)");
  bench_cmd->add_option("--out,--output", bench_out, "Result table JSON (default stdout)");

  // gen-fixture
  auto* fixture_cmd = app.add_subcommand("gen-fixture", "Write a synthetic modality-gap dataset");
  fixture::FixtureSpec fx;
  Flag<std::uint64_t> fixture_seed;
  std::string fixture_out;
  add(fixture_cmd, "--seed", fixture_seed, "Generator seed")->required();
  fixture_cmd->add_option("--n", fx.num_images, "Images")->capture_default_str();
  fixture_cmd->add_option("--classes", fx.num_classes, "Classes")->capture_default_str();
  fixture_cmd->add_option("--dim", fx.dim, "Embedding dimension")->capture_default_str();
  fixture_cmd->add_option("--cone", fx.cone, "Weight of the shared image-cone direction")
      ->capture_default_str();
  fixture_cmd->add_option("--separation", fx.separation, "Cluster center scale")->capture_default_str();
  fixture_cmd->add_option("--angle", fx.angle_degrees, "Modality-gap rotation in degrees")
      ->capture_default_str();
  fixture_cmd->add_option("--offset", fx.offset, "Modality-gap shift magnitude")->capture_default_str();
  fixture_cmd->add_option("--noise", fx.noise, "Text embedding noise")->capture_default_str();
  fixture_cmd->add_option("--descriptions", fx.descriptions_per_class, "Descriptions per class")
      ->capture_default_str();
  fixture_cmd->add_option("--out,--output", fixture_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (pipeline_cmd->parsed()) {
      pipeline::RunSpec spec;
      spec.mode = parse_mode(mode);
      spec.images = pipeline_in.images;
      spec.kb = pipeline_in.kb;
      spec.kb_sidecars = parse_sidecars(pipeline_in.kb_embeddings);
      spec.normalize = pipeline_in.normalize.get();
      if (!names_path.empty()) spec.names = names_path;
      if (!labels_path.empty()) spec.labels = labels_path;
      if (!pipeline_solver.marginal.empty()) spec.marginal = pipeline_solver.marginal;
      spec.k = pipeline_k.get();
      if (auto a = pipeline_solver.algorithm.get()) spec.algorithm = ot::parse_algorithm(*a);
      spec.tau_ot = pipeline_solver.tau_ot.get();
      spec.max_iterations = pipeline_solver.max_iterations.get();
      spec.tolerance = pipeline_solver.tolerance.get();
      spec.tau_learn = pipeline_learn.tau_learn.get();
      spec.learning_rate = pipeline_learn.lr.get();
      spec.momentum = pipeline_learn.momentum.get();
      spec.epochs = pipeline_learn.epochs.get();
      spec.loss_tolerance = pipeline_learn.loss_tolerance.get();

      const RunReport report = pipeline::run(spec);
      io::write_report(report, report_path);
      io::write_predictions_csv(csv_path.empty() ? predictions_path_for(report_path) : fs::path(csv_path),
                                report.predictions, report.class_names);
      if (report.accuracy) err << "accuracy " << report.accuracy->overall << "\n";
      return 0;
    }

    if (retrieve_cmd->parsed()) {
      const Matrix images = retrieve_in.load_images();
      const auto kb = retrieve_in.load_kb();
      const std::size_t k = retrieve_k.get().value_or(3);
      const auto sel = retrieval::retrieve(images, kb, k);
      ordered_json doc;
      doc["k"] = k;
      doc["classes"] = ordered_json::array();
      for (std::size_t j = 0; j < kb.num_classes(); ++j) {
        ordered_json c;
        c["name"] = kb[j].name;
        c["indices"] = sel.classes[j].indices;
        c["scores"] = sel.classes[j].scores;
        std::vector<std::string> texts;
        for (std::size_t l : sel.classes[j].indices) texts.push_back(kb[j].descriptions[l]);
        c["descriptions"] = texts;
        doc["classes"].push_back(std::move(c));
      }
      io::write_text(retrieve_out, doc.dump(2) + "\n");
      if (!proxies_out.empty()) {
        io::write_embeddings(proxies_out, retrieval::build_text_proxies(kb, sel).w);
      }
      return 0;
    }

    if (plan_cmd->parsed()) {
      const Matrix images = plan_in.load_images();
      const auto kb = plan_in.load_kb();
      const auto solver = plan_solver.config();
      const auto marginal = plan_solver.marginal.empty()
                                ? ot::ClassMarginal::uniform(kb.num_classes())
                                : io::read_marginal(plan_solver.marginal);
      if (marginal.size() != kb.num_classes()) {
        raise<DataError>(plan_solver.marginal, ": marginal has ", marginal.size(),
                         " entries, expected ", kb.num_classes());
      }
      const auto stages =
          pipeline::pseudo_label_stages(images, kb, plan_k.get().value_or(3), solver, marginal);
      io::write_embeddings(plan_out, stages.pseudo_labels);
      ordered_json diag = {{"algorithm", ot::to_string(solver.algorithm)},
                           {"iterations", stages.plan.iterations_used},
                           {"row_violation", stages.plan.final_row_violation},
                           {"col_violation", stages.plan.final_col_violation},
                           {"converged", stages.plan.converged}};
      err << diag.dump() << "\n";
      return 0;
    }

    if (learn_cmd->parsed()) {
      const Matrix images = learn_in.load_images();
      const Matrix labels = io::read_embeddings(pseudo_path);
      Matrix init = io::read_embeddings(init_path);
      if (init.rows() > 0) init = l2_normalize_rows(init);
      const auto result = learner::learn(images, labels, init, learn_flags.config());
      io::write_embeddings(learn_out, result.weights);
      ordered_json diag = {{"epochs_run", result.trace.epochs_run},
                           {"stop_reason", learner::to_string(result.trace.stop_reason)},
                           {"initial_loss", result.trace.losses.front()},
                           {"final_loss", result.trace.losses.back()}};
      err << diag.dump() << "\n";
      return 0;
    }

    if (classify_cmd->parsed()) {
      const Matrix images = classify_in.load_images();
      const Matrix proxies = io::read_embeddings(proxies_path);
      const auto names =
          classify_in.kb.empty() ? index_names(proxies.rows()) : classify_in.load_kb().class_names();
      if (names.size() != proxies.rows()) {
        raise<DataError>(proxies_path, ": ", proxies.rows(), " proxies but ", names.size(),
                         " classes in ", classify_in.kb);
      }
      io::write_predictions_csv(classify_out, learner::classify(images, proxies), names);
      return 0;
    }

    if (eval_cmd->parsed()) {
      const auto kb = io::read_knowledge_base(eval_kb, {{}, true});
      const auto names = kb.class_names();
      const auto predicted = io::read_predictions_csv(eval_pred, names);
      const auto gold = io::read_labels(eval_labels, names);
      if (predicted.size() != gold.size()) {
        raise<DataError>(eval_pred, ": ", predicted.size(), " predictions but ", gold.size(),
                         " gold labels in ", eval_labels);
      }
      const auto acc = pipeline::accuracy(predicted, gold, names.size());
      ordered_json per_class = ordered_json::object();
      for (std::size_t j = 0; j < names.size(); ++j) {
        per_class[names[j]] = acc.per_class[j] ? ordered_json(*acc.per_class[j]) : ordered_json(nullptr);
      }
      ordered_json doc = {{"overall", acc.overall}, {"per_class", per_class}};
      io::write_text(eval_out, doc.dump(2) + "\n");
      return 0;
    }

    if (bench_cmd->parsed()) {
      Matrix m;
      if (!matrix_path.empty()) {
        m = io::read_embeddings(matrix_path);
      } else {
        const auto seed = bench_seed.get();
        if (!seed) raise<UsageError>("bench-ot needs --seed when no --matrix is given");
        m = pipeline::generate_instance(
            instance == "stress" ? pipeline::InstanceKind::stress : pipeline::InstanceKind::uniform,
            bench_rows, bench_cols, *seed);
      }
      const auto marginal = bench_marginal.empty() ? ot::ClassMarginal::uniform(m.cols())
                                                   : io::read_marginal(bench_marginal);
      if (algorithms.empty()) algorithms = {"sinkhorn_linear", "sinkhorn_log", "stable_greenkhorn"};
      std::vector<ot::SolverConfig> configs;
      for (const auto& a : algorithms) {
        ot::SolverConfig cfg;
        cfg.algorithm = ot::parse_algorithm(a);
        cfg.tau_ot = bench_tau;
        cfg.max_iterations = bench_iters;
        cfg.tolerance = bench_tol;
        cfg.validate();
        configs.push_back(cfg);
      }
      const auto rows = pipeline::bench_solvers(m, configs, marginal);
      const std::string table = pipeline::bench_to_json(rows);
      if (bench_out.empty()) {
        out << table;
      } else {
        io::write_text(bench_out, table);
      }
      bool overflow = false;
      for (const auto& r : rows) {
        if (r.status != "ok") {
          err << ot::to_string(r.config.algorithm) << ": " << r.message << "\n";
          overflow = true;
        }
      }
      return overflow ? static_cast<int>(ErrorKind::numeric) : 0;
    }

    if (fixture_cmd->parsed()) {
      fx.seed = *fixture_seed.get();
      fixture::write(fixture::generate(fx), fixture_out);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::internal);
  }
  return static_cast<int>(ErrorKind::usage);
}

}  // namespace kpl::cli
