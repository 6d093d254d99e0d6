#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kpl/numerics.hpp"
#include "kpl/ot.hpp"
#include "kpl/report.hpp"
#include "kpl/retrieval.hpp"

// File formats.
//
// EMB1 embedding matrix, all integers little-endian:
//   offset  0  magic "EMB1"
//   offset  4  u16 version (= 1)
//   offset  6  u8  dtype (0 = binary32, 1 = binary64)
//   offset  7  u64 rows
//   offset 15  u64 cols
//   offset 23  payload, rows * cols values, row-major
//   then       u32 CRC-32 (IEEE 802.3, as in zlib) of the payload bytes
namespace kpl::io {

enum class DType : std::uint8_t { binary32 = 0, binary64 = 1 };

inline constexpr std::uint16_t kEmbVersion = 1;
inline constexpr std::size_t kEmbHeaderSize = 23;

std::vector<std::uint8_t> encode_embeddings(const Matrix& m, DType dtype = DType::binary64);
/// `source` names the input in error messages.
Matrix decode_embeddings(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

void write_embeddings(const std::filesystem::path& path, const Matrix& m,
                      DType dtype = DType::binary64);
Matrix read_embeddings(const std::filesystem::path& path);

struct KnowledgeBaseOptions {
  // Class name -> EMB1 file used when the class has no inline embeddings.
  std::map<std::string, std::filesystem::path> sidecars;
  // Normalize embedding rows on load instead of requiring unit norm.
  bool normalize = false;
};

retrieval::KnowledgeBase parse_knowledge_base(const std::string& json_text,
                                              const KnowledgeBaseOptions& options = {},
                                              const std::string& source = "<memory>");
retrieval::KnowledgeBase read_knowledge_base(const std::filesystem::path& path,
                                             const KnowledgeBaseOptions& options = {});
std::string knowledge_base_to_json(const retrieval::KnowledgeBase& kb);

/// One label per line: a class name or an integer index in [0, K).
std::vector<std::size_t> parse_labels(const std::string& text,
                                      const std::vector<std::string>& class_names,
                                      const std::string& source = "<memory>");
std::vector<std::size_t> read_labels(const std::filesystem::path& path,
                                     const std::vector<std::string>& class_names);

/// JSON array of nonnegative weights, renormalized to sum to one.
ot::ClassMarginal parse_marginal(const std::string& json_text, const std::string& source = "<memory>");
ot::ClassMarginal read_marginal(const std::filesystem::path& path);

/// Report JSON with a fixed key order.
std::string report_to_json(const RunReport& report, bool include_timing = true);
void write_report(const RunReport& report, const std::filesystem::path& path);

/// "index,predicted_class_name" CSV with a header row.
std::string predictions_to_csv(const std::vector<std::size_t>& predictions,
                               const std::vector<std::string>& class_names);
void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<std::size_t>& predictions,
                           const std::vector<std::string>& class_names);
/// Inverse of predictions_to_csv; rows must be indexed 0..N-1 in order.
std::vector<std::size_t> parse_predictions_csv(const std::string& text,
                                               const std::vector<std::string>& class_names,
                                               const std::string& source = "<memory>");
std::vector<std::size_t> read_predictions_csv(const std::filesystem::path& path,
                                              const std::vector<std::string>& class_names);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace kpl::io
