#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "kpl/numerics.hpp"

namespace kpl::retrieval {

struct ClassRecord {
  std::string name;
  std::vector<std::string> descriptions;
  Matrix embeddings;  // one unit row per description
};

// Per-class pools of visual descriptions with their precomputed text embeddings.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  /// Validates non-empty classes, unique names, matching counts, a shared
  /// embedding dimension and unit-norm rows (within 1e-6). DataError otherwise.
  explicit KnowledgeBase(std::vector<ClassRecord> classes);

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const ClassRecord& operator[](std::size_t j) const { return classes_.at(j); }
  const std::vector<ClassRecord>& classes() const noexcept { return classes_; }
  std::vector<std::string> class_names() const;
  /// Index of the class with the given name, or num_classes() if absent.
  std::size_t find(std::string_view name) const;

 private:
  std::vector<ClassRecord> classes_;
  std::size_t dim_ = 0;
};

struct ClassSelection {
  std::vector<std::size_t> indices;  // into the class's description list
  Vector scores;                     // non-increasing
};

struct RetrievalResult {
  std::vector<ClassSelection> classes;
};

enum class Provenance { class_names, description_mean, retrieved_mean };
std::string_view to_string(Provenance p);

struct TextProxies {
  Matrix w;  // K x d, unit rows
  Provenance provenance = Provenance::class_names;
};

/// Arithmetic mean of the image rows, not re-normalized.
Vector mean_image_feature(const Matrix& images);

/// Cosine between mean_feat and every description embedding of class j.
Vector score_descriptions(std::span<const double> mean_feat, const KnowledgeBase& kb,
                          std::size_t class_index);

/// Indices of the k largest scores, best first; lower index wins ties.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

/// Scores and selects the top-k descriptions of every class against the
/// dataset's mean image feature. k larger than a class's pool is a UsageError.
RetrievalResult retrieve(const Matrix& images, const KnowledgeBase& kb, std::size_t k);

/// Row j = normalized mean of the selected embeddings of class j.
TextProxies build_text_proxies(const KnowledgeBase& kb, const RetrievalResult& selection);

/// Row j = normalized mean of all embeddings of class j.
TextProxies description_mean_proxies(const KnowledgeBase& kb);

/// Class-name embeddings used as-is. Needs at least two rows.
TextProxies name_proxies(const Matrix& names);

}  // namespace kpl::retrieval
