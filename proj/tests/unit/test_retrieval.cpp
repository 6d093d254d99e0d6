#include <cmath>
#include <string>

#include "doctest.h"
#include "kpl/error.hpp"
#include "kpl/random.hpp"
#include "kpl/retrieval.hpp"
#include "support/oracles.hpp"

using namespace kpl;
using namespace kpl::retrieval;

namespace {

ClassRecord record(std::string name, const Matrix& rows) {
  ClassRecord r;
  r.name = std::move(name);
  r.embeddings = rows;
  for (std::size_t l = 0; l < rows.rows(); ++l) r.descriptions.push_back(r.name + " " + std::to_string(l));
  return r;
}

KnowledgeBase random_kb(Rng& rng, std::size_t k, std::size_t n, std::size_t d) {
  std::vector<ClassRecord> classes;
  for (std::size_t j = 0; j < k; ++j) {
    classes.push_back(record("c" + std::to_string(j), l2_normalize_rows(uniform_matrix(rng, n, d))));
  }
  return KnowledgeBase(std::move(classes));
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("retrieval") {
  TEST_CASE("mean_image_feature examples") {
    CHECK(mean_image_feature(Matrix{{0.3, -0.4}}) == Vector{0.3, -0.4});
    CHECK(mean_image_feature(Matrix{{1.0, 0.0}, {0.0, 1.0}}) == Vector{0.5, 0.5});
    CHECK_THROWS_AS(mean_image_feature(Matrix(0, 3)), UsageError);

    const KnowledgeBase kb({record("a", Matrix{{1.0, 0.0}})});
    const Vector zero = mean_image_feature(Matrix{{1.0, 0.0}, {-1.0, 0.0}});
    CHECK(zero == Vector{0.0, 0.0});
    CHECK_THROWS_AS(score_descriptions(zero, kb, 0), DataError);
  }

  TEST_CASE("score_descriptions examples") {
    const double r = 1.0 / std::sqrt(2.0);
    const KnowledgeBase kb({record("a", Matrix{{r, r}, {r, -r}, {1.0, 0.0}})});
    const Vector feat{2.0, 2.0};
    const Vector s = score_descriptions(feat, kb, 0);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(s[1]) <= 1e-15);
    CHECK(s[2] == doctest::Approx(r).epsilon(1e-15));
    const Vector scaled = score_descriptions(Vector{7.0, 7.0}, kb, 0);
    for (std::size_t l = 0; l < 3; ++l) CHECK(scaled[l] == doctest::Approx(s[l]).epsilon(1e-15));
    CHECK_THROWS_AS(score_descriptions(Vector{1.0, 0.0, 0.0}, kb, 0), DataError);
  }

  TEST_CASE("top_k examples") {
    const Vector s{0.1, 0.9, 0.5};
    CHECK(top_k(s, 2) == std::vector<std::size_t>{1, 2});
    CHECK(top_k(s, 3) == std::vector<std::size_t>{1, 2, 0});
    const Vector flat{0.4, 0.4, 0.4};
    CHECK(top_k(flat, 2) == std::vector<std::size_t>{0, 1});
    CHECK_THROWS_AS(top_k(s, 4), UsageError);
    CHECK_THROWS_AS(top_k(s, 0), UsageError);
  }

  TEST_CASE("top_k matches a full sort on random scores with ties") {
    Rng rng(31);
    for (int t = 0; t < 300; ++t) {
      const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 12);
      Vector s(n);
      for (double& x : s) x = std::round(rng.uniform(-1.0, 1.0) * 4.0) / 4.0;
      const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * n);
      const auto got = top_k(s, k);
      CHECK(got == oracle::sorted_top_k(s, k));
      for (std::size_t r = 1; r < got.size(); ++r) CHECK(s[got[r - 1]] >= s[got[r]]);
    }
  }

  TEST_CASE("retrieve reports class and pool size when k is too large") {
    Rng rng(1);
    const KnowledgeBase kb = random_kb(rng, 2, 3, 4);
    const Matrix images = l2_normalize_rows(uniform_matrix(rng, 5, 4));
    try {
      retrieve(images, kb, 4);
      FAIL("expected UsageError");
    } catch (const UsageError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("'c0'") != std::string::npos);
      CHECK(msg.find("n=3") != std::string::npos);
    }
    const RetrievalResult r = retrieve(images, kb, 2);
    REQUIRE(r.classes.size() == 2);
    for (const auto& c : r.classes) {
      CHECK(c.indices.size() == 2);
      CHECK(c.scores[0] >= c.scores[1]);
    }
  }

  TEST_CASE("build_text_proxies examples") {
    const KnowledgeBase kb({record("a", Matrix{{1.0, 0.0}, {0.0, 1.0}, {0.6, 0.8}}),
                            record("b", Matrix{{0.0, 1.0}, {0.0, 1.0}, {1.0, 0.0}})});
    RetrievalResult sel;
    sel.classes = {{{0, 1}, {0.0, 0.0}}, {{0, 1}, {0.0, 0.0}}};
    const TextProxies p = build_text_proxies(kb, sel);
    CHECK(p.provenance == Provenance::retrieved_mean);
    CHECK(p.w(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(p.w(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(p.w(1, 0) == 0.0);
    CHECK(p.w(1, 1) == 1.0);

    sel.classes = {{{2}, {0.0}}, {{2}, {0.0}}};
    const TextProxies single = build_text_proxies(kb, sel);
    CHECK(single.w(0, 0) == 0.6);
    CHECK(single.w(0, 1) == 0.8);
  }

  TEST_CASE("retrieving every description reproduces the description mean") {
    Rng rng(77);
    const KnowledgeBase kb = random_kb(rng, 4, 6, 8);
    const Matrix images = l2_normalize_rows(uniform_matrix(rng, 20, 8));
    const TextProxies all = build_text_proxies(kb, retrieve(images, kb, 6));
    const TextProxies mean = description_mean_proxies(kb);
    CHECK(mean.provenance == Provenance::description_mean);
    for (std::size_t t = 0; t < all.w.size(); ++t) {
      CHECK(std::abs(all.w.data()[t] - mean.w.data()[t]) <= 1e-12);
    }
  }

  TEST_CASE("retrieval is invariant to rescaling the images") {
    Rng rng(8);
    const KnowledgeBase kb = random_kb(rng, 3, 10, 6);
    const Matrix images = uniform_matrix(rng, 15, 6);
    Matrix scaled = images;
    for (double& x : scaled.data()) x *= 37.5;
    const RetrievalResult a = retrieve(images, kb, 4);
    const RetrievalResult b = retrieve(scaled, kb, 4);
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.classes[j].indices == b.classes[j].indices);
  }

  TEST_CASE("name_proxies pass rows through") {
    const Matrix names{{1.0, 0.0}, {0.0, 1.0}};
    const TextProxies p = name_proxies(names);
    CHECK(p.w == names);
    CHECK(p.provenance == Provenance::class_names);
    CHECK(to_string(p.provenance) == "class_names");
    CHECK_THROWS_AS(name_proxies(Matrix{{1.0, 0.0}}), DataError);
  }

  TEST_CASE("knowledge base validation names the class") {
    CHECK(error_text([] {
            KnowledgeBase({record("a", Matrix{{1.0, 0.0}}), record("a", Matrix{{0.0, 1.0}})});
          }).find("duplicate class name 'a'") != std::string::npos);
    CHECK(error_text([] {
            ClassRecord r = record("b", Matrix{{1.0, 0.0}});
            r.descriptions.push_back("extra");
            KnowledgeBase({r});
          }).find("class 'b' has 2 descriptions but 1") != std::string::npos);
    CHECK(error_text([] {
            KnowledgeBase({record("a", Matrix{{1.0, 0.0}}), record("c", Matrix{{1.0, 0.0, 0.0}})});
          }).find("'c'") != std::string::npos);
    CHECK(error_text([] { KnowledgeBase({record("d", Matrix{{2.0, 0.0}})}); }).find("'d'") !=
          std::string::npos);
    CHECK_THROWS_AS(KnowledgeBase(std::vector<ClassRecord>{}), DataError);

    const KnowledgeBase kb({record("x", Matrix{{1.0, 0.0}}), record("y", Matrix{{0.0, 1.0}})});
    CHECK(kb.find("y") == 1);
    CHECK(kb.find("z") == 2);
    CHECK(kb.class_names() == std::vector<std::string>{"x", "y"});
  }
}
