#include "kpl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "kpl/error.hpp"

namespace kpl::retrieval {

namespace {

constexpr double kUnitTolerance = 1e-6;

Matrix mean_rows(const Matrix& emb, std::span<const std::size_t> rows) {
  Matrix out(1, emb.cols());
  auto o = out.row(0);
  for (std::size_t r : rows) {
    const auto src = emb.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) o[c] += src[c];
  }
  for (double& x : o) x /= static_cast<double>(rows.size());
  return out;
}

}  // namespace

KnowledgeBase::KnowledgeBase(std::vector<ClassRecord> classes) : classes_(std::move(classes)) {
  if (classes_.empty()) raise<DataError>("knowledge base has no classes");
  dim_ = classes_.front().embeddings.cols();
  std::set<std::string_view> seen;
  for (const auto& c : classes_) {
    if (!seen.insert(c.name).second) raise<DataError>("duplicate class name '", c.name, "'");
    if (c.descriptions.empty()) raise<DataError>("class '", c.name, "' has no descriptions");
    if (c.embeddings.rows() != c.descriptions.size()) {
      raise<DataError>("class '", c.name, "' has ", c.descriptions.size(), " descriptions but ",
                       c.embeddings.rows(), " embedding rows");
    }
    if (c.embeddings.cols() != dim_) {
      raise<DataError>("class '", c.name, "' embeddings have dimension ", c.embeddings.cols(),
                       ", expected ", dim_);
    }
    for (std::size_t r = 0; r < c.embeddings.rows(); ++r) {
      const double n = norm(c.embeddings.row(r));
      if (!(std::abs(n - 1.0) <= kUnitTolerance)) {
        raise<DataError>("class '", c.name, "' embedding row ", r, " has norm ", n,
                         " (unit norm required)");
      }
    }
  }
  if (dim_ == 0) raise<DataError>("knowledge base embeddings have dimension 0");
}

std::vector<std::string> KnowledgeBase::class_names() const {
  std::vector<std::string> names;
  names.reserve(classes_.size());
  for (const auto& c : classes_) names.push_back(c.name);
  return names;
}

std::size_t KnowledgeBase::find(std::string_view name) const {
  for (std::size_t j = 0; j < classes_.size(); ++j) {
    if (classes_[j].name == name) return j;
  }
  return classes_.size();
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::class_names:
      return "class_names";
    case Provenance::description_mean:
      return "description_mean";
    case Provenance::retrieved_mean:
      return "retrieved_mean";
  }
  return "unknown";
}

Vector mean_image_feature(const Matrix& images) {
  if (images.rows() == 0) raise<UsageError>("mean image feature of an empty dataset");
  Vector mean(images.cols(), 0.0);
  for (std::size_t i = 0; i < images.rows(); ++i) {
    const auto r = images.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) mean[c] += r[c];
  }
  for (double& x : mean) x /= static_cast<double>(images.rows());
  return mean;
}

Vector score_descriptions(std::span<const double> mean_feat, const KnowledgeBase& kb,
                          std::size_t class_index) {
  if (class_index >= kb.num_classes()) {
    raise<UsageError>("class index ", class_index, " out of range (", kb.num_classes(),
                      " classes)");
  }
  if (mean_feat.size() != kb.dim()) {
    raise<DataError>("image feature dimension ", mean_feat.size(),
                     " does not match knowledge base dimension ", kb.dim());
  }
  if (norm(mean_feat) == 0.0) {
    raise<DataError>("mean image feature is the zero vector; retrieval scores are undefined");
  }
  const Matrix& emb = kb[class_index].embeddings;
  Vector scores(emb.rows());
  for (std::size_t l = 0; l < emb.rows(); ++l) scores[l] = cosine(mean_feat, emb.row(l));
  return scores;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    raise<UsageError>("top-k needs 1 <= k <= n, got k=", k, " with n=", scores.size());
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

RetrievalResult retrieve(const Matrix& images, const KnowledgeBase& kb, std::size_t k) {
  const Vector mean = mean_image_feature(images);
  RetrievalResult result;
  result.classes.reserve(kb.num_classes());
  for (std::size_t j = 0; j < kb.num_classes(); ++j) {
    const std::size_t n = kb[j].descriptions.size();
    if (k < 1 || k > n) {
      raise<UsageError>("retrieval k=", k, " is invalid for class '", kb[j].name, "' with n=", n,
                        " descriptions");
    }
    const Vector scores = score_descriptions(mean, kb, j);
    ClassSelection sel;
    sel.indices = top_k(scores, k);
    for (std::size_t l : sel.indices) sel.scores.push_back(scores[l]);
    result.classes.push_back(std::move(sel));
  }
  return result;
}

TextProxies build_text_proxies(const KnowledgeBase& kb, const RetrievalResult& selection) {
  if (selection.classes.size() != kb.num_classes()) {
    raise<UsageError>("selection covers ", selection.classes.size(), " classes, knowledge base has ",
                      kb.num_classes());
  }
  TextProxies out{Matrix(kb.num_classes(), kb.dim()), Provenance::retrieved_mean};
  for (std::size_t j = 0; j < kb.num_classes(); ++j) {
    const auto& idx = selection.classes[j].indices;
    if (idx.empty()) raise<UsageError>("empty selection for class '", kb[j].name, "'");
    for (std::size_t l : idx) {
      if (l >= kb[j].embeddings.rows()) {
        raise<UsageError>("selected index ", l, " out of range for class '", kb[j].name, "'");
      }
    }
    const Matrix mean = l2_normalize_rows(mean_rows(kb[j].embeddings, idx));
    std::copy(mean.data().begin(), mean.data().end(), out.w.row(j).begin());
  }
  return out;
}

TextProxies description_mean_proxies(const KnowledgeBase& kb) {
  TextProxies out{Matrix(kb.num_classes(), kb.dim()), Provenance::description_mean};
  for (std::size_t j = 0; j < kb.num_classes(); ++j) {
    std::vector<std::size_t> all(kb[j].embeddings.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Matrix mean = l2_normalize_rows(mean_rows(kb[j].embeddings, all));
    std::copy(mean.data().begin(), mean.data().end(), out.w.row(j).begin());
  }
  return out;
}

TextProxies name_proxies(const Matrix& names) {
  if (names.rows() < 2) raise<DataError>("class-name proxies need at least 2 classes");
  return TextProxies{names, Provenance::class_names};
}

}  // namespace kpl::retrieval
