#include <algorithm>
#include <string>

#include "doctest.h"
#include "kpl/error.hpp"
#include "kpl/fixture.hpp"
#include "kpl/io.hpp"
#include "kpl/pipeline.hpp"
#include "support/tempdir.hpp"

using namespace kpl;
using namespace kpl::pipeline;

namespace {

const fixture::Fixture& standard_fixture() {
  static const fixture::Fixture fx = [] {
    fixture::FixtureSpec spec;
    spec.seed = 42;
    return fixture::generate(spec);
  }();
  return fx;
}

RunInputs inputs_for(const fixture::Fixture& fx) {
  RunInputs in;
  in.images = fx.images;
  in.kb = fx.kb;
  in.names = fx.names;
  in.gold = fx.labels;
  return in;
}

ResolvedConfig config_for(Mode mode) {
  RunSpec spec;
  spec.mode = mode;
  if (mode == Mode::clip_baseline) spec.names = "names.emb";
  return resolve(spec);
}

bool listed(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("accuracy examples") {
    CHECK(accuracy({0, 1, 2}, {0, 1, 2}, 3).overall == 1.0);
    CHECK(accuracy({1, 0}, {0, 1}, 2).overall == 0.0);
    const AccuracyReport r = accuracy({0, 1, 1, 0}, {0, 1, 0, 0}, 3);
    CHECK(r.overall == 0.75);
    REQUIRE(r.per_class.size() == 3);
    CHECK(*r.per_class[0] == doctest::Approx(2.0 / 3.0));
    CHECK(*r.per_class[1] == 1.0);
    CHECK_FALSE(r.per_class[2].has_value());
    CHECK_THROWS_AS(accuracy({0}, {0, 1}, 2), UsageError);
  }

  TEST_CASE("resolve records defaults and rejects unused options") {
    RunSpec spec;
    spec.mode = Mode::kpl_full;
    spec.tau_ot = 0.05;
    const ResolvedConfig cfg = resolve(spec);
    CHECK(cfg.solver.tau_ot == 0.05);
    CHECK_FALSE(listed(cfg.defaults_applied, "solver.tau_ot"));
    CHECK(listed(cfg.defaults_applied, "retrieval_k"));
    CHECK(listed(cfg.defaults_applied, "solver.algorithm"));
    CHECK(listed(cfg.defaults_applied, "learn.learning_rate"));
    CHECK(listed(cfg.defaults_applied, "marginal"));
    CHECK(cfg.retrieval_k == 3);
    CHECK(cfg.learn.tau_learn == 0.01);

    RunSpec text;
    text.mode = Mode::kpl_text;
    text.tau_ot = 0.05;
    CHECK_THROWS_AS(resolve(text), UsageError);

    RunSpec clip;
    clip.mode = Mode::clip_baseline;
    CHECK_THROWS_AS(resolve(clip), UsageError);
    clip.names = "names.emb";
    CHECK_NOTHROW(resolve(clip));
    clip.k = 2;
    CHECK_THROWS_AS(resolve(clip), UsageError);
  }

  TEST_CASE("modes run on the standard fixture") {
    const auto& fx = standard_fixture();
    const RunInputs in = inputs_for(fx);
    for (Mode m : {Mode::clip_baseline, Mode::description_baseline, Mode::kpl_text, Mode::kpl_full}) {
      CAPTURE(to_string(m));
      const RunReport r = run(in, config_for(m));
      CHECK(r.predictions.size() == fx.images.rows());
      REQUIRE(r.accuracy.has_value());
      CHECK(r.accuracy->overall >= 0.0);
      CHECK(r.accuracy->overall <= 1.0);
      CHECK(r.retrieval.has_value() == (m == Mode::kpl_text || m == Mode::kpl_full));
      CHECK(r.solver.has_value() == (m == Mode::kpl_full));
      CHECK(r.learn.has_value() == (m == Mode::kpl_full));
    }
  }

  TEST_CASE("without gold labels the report has no accuracy") {
    RunInputs in = inputs_for(standard_fixture());
    in.gold.reset();
    const RunReport r = run(in, config_for(Mode::kpl_text));
    CHECK_FALSE(r.accuracy.has_value());
    CHECK(io::report_to_json(r).find("\"accuracy\"") == std::string::npos);
  }

  TEST_CASE("kpl_full with zero learning rate reproduces kpl_text") {
    const RunInputs in = inputs_for(standard_fixture());
    RunSpec spec;
    spec.mode = Mode::kpl_full;
    spec.learning_rate = 0.0;
    const RunReport full = run(in, resolve(spec));
    const RunReport text = run(in, config_for(Mode::kpl_text));
    CHECK(full.predictions == text.predictions);
  }

  TEST_CASE("runs are deterministic") {
    const RunInputs in = inputs_for(standard_fixture());
    const RunReport a = run(in, config_for(Mode::kpl_full));
    const RunReport b = run(in, config_for(Mode::kpl_full));
    CHECK(io::report_to_json(a, false) == io::report_to_json(b, false));
  }

  TEST_CASE("baselines are equivariant under class relabeling") {
    const auto& fx = standard_fixture();
    const std::size_t k = fx.kb.num_classes();
    // perm[new] = old
    std::vector<std::size_t> perm(k);
    for (std::size_t j = 0; j < k; ++j) perm[j] = (j + 2) % k;
    std::vector<retrieval::ClassRecord> classes;
    Matrix names(k, fx.names.cols());
    for (std::size_t j = 0; j < k; ++j) {
      classes.push_back(fx.kb[perm[j]]);
      std::copy(fx.names.row(perm[j]).begin(), fx.names.row(perm[j]).end(), names.row(j).begin());
    }
    RunInputs permuted = inputs_for(fx);
    permuted.kb = retrieval::KnowledgeBase(std::move(classes));
    permuted.names = names;
    permuted.gold.reset();

    RunInputs original = inputs_for(fx);
    original.gold.reset();
    for (Mode m : {Mode::clip_baseline, Mode::description_baseline}) {
      CAPTURE(to_string(m));
      const auto a = run(original, config_for(m)).predictions;
      const auto b = run(permuted, config_for(m)).predictions;
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(perm[b[i]] == a[i]);
    }
  }

  TEST_CASE("dimension mismatches are data errors") {
    RunInputs in = inputs_for(standard_fixture());
    in.images = Matrix(4, 3, 0.5);
    CHECK_THROWS_AS(run(in, config_for(Mode::kpl_text)), DataError);
    in = inputs_for(standard_fixture());
    in.gold = std::vector<std::size_t>{0, 1};
    CHECK_THROWS_AS(run(in, config_for(Mode::kpl_text)), DataError);
  }

  TEST_CASE("load_inputs names the offending file") {
    testing::TempDir dir("load");
    const auto files = fixture::write(standard_fixture(), dir.path());
    RunSpec spec;
    spec.mode = Mode::kpl_text;
    spec.images = files.images;
    spec.kb = files.kb;
    spec.labels = dir / "missing.txt";
    try {
      load_inputs(spec, resolve(spec));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("missing.txt") != std::string::npos);
    }
    spec.labels = files.labels;
    const RunReport r = run(spec);
    CHECK(r.accuracy.has_value());
  }

  TEST_CASE("a gap-free fixture with separated clusters is solved by class names") {
    fixture::FixtureSpec spec;
    spec.seed = 3;
    spec.angle_degrees = 0.0;
    spec.noise = 0.0;
    spec.offset = 0.0;
    spec.separation = 8.0;
    const fixture::Fixture fx = fixture::generate(spec);
    const RunReport clip = run(inputs_for(fx), config_for(Mode::clip_baseline));
    CHECK(clip.accuracy->overall == 1.0);
    const auto proxies = retrieval::build_text_proxies(fx.kb, retrieval::retrieve(fx.images, fx.kb, 3));
    for (std::size_t j = 0; j < fx.kb.num_classes(); ++j) {
      CHECK(dot(proxies.w.row(j), fx.centers.row(j)) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("fixtures are reproducible from the seed") {
    fixture::FixtureSpec spec;
    spec.seed = 9;
    spec.num_images = 20;
    testing::TempDir a("fxa"), b("fxb");
    const auto fa = fixture::write(fixture::generate(spec), a.path());
    const auto fb = fixture::write(fixture::generate(spec), b.path());
    for (auto [x, y] : {std::pair{fa.images, fb.images}, {fa.labels, fb.labels}, {fa.kb, fb.kb},
                        {fa.names, fb.names}, {fa.manifest, fb.manifest}}) {
      CHECK(io::read_text(x) == io::read_text(y));
    }
    spec.seed = 10;
    CHECK(fixture::generate(spec).images != fixture::generate(fixture::FixtureSpec{.seed = 9}).images);
  }

  TEST_CASE("bench_solvers") {
    CHECK(bench_solvers(Matrix{{1.0}}, {}, ot::ClassMarginal::uniform(1)).empty());

    const Matrix m = generate_instance(InstanceKind::uniform, 64, 8, 1);
    std::vector<ot::SolverConfig> configs;
    for (auto a : {ot::Algorithm::sinkhorn_linear, ot::Algorithm::sinkhorn_log, ot::Algorithm::stable_greenkhorn}) {
      ot::SolverConfig c;
      c.algorithm = a;
      c.tau_ot = 0.05;
      configs.push_back(c);
    }
    const auto rows = bench_solvers(m, configs, ot::ClassMarginal::uniform(8));
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
      CHECK(r.status == "ok");
      CHECK(r.converged);
    }
    CHECK(bench_to_json(rows, false) == bench_to_json(bench_solvers(m, configs, ot::ClassMarginal::uniform(8)), false));

    // The objective moves to first order with the marginal residual, so
    // agreement to 1e-8 needs marginals that tight as well.
    for (auto& c : configs) c.tolerance = 1e-10;
    const auto tight = bench_solvers(m, configs, ot::ClassMarginal::uniform(8));
    for (const auto& r : tight) {
      CHECK(r.converged);
      CHECK(std::abs(r.objective - tight[0].objective) <= 1e-8);
    }

    const Matrix stress = generate_instance(InstanceKind::stress, 64, 8, 1);
    for (double x : stress.data()) CHECK(std::abs(x) == 1.0);
    for (auto& c : configs) c.tau_ot = 1e-3;
    const auto hard = bench_solvers(stress, configs, ot::ClassMarginal::uniform(8));
    CHECK(hard[0].status == "numeric_overflow");
    CHECK(hard[1].status == "ok");
    CHECK(hard[2].status == "ok");
  }
}
