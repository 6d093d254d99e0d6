#include "kpl/io.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kpl/error.hpp"

namespace kpl::io {

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * b)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return static_cast<T>(v);
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  while (len > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    len -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

ordered_json parse_json(const std::string& text, const std::string& source) {
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    raise<DataError>(source, ": invalid JSON: ", e.what());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise<DataError>("cannot open '", path.string(), "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise<DataError>("cannot open '", path.string(), "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise<DataError>("failed writing '", path.string(), "'");
}

std::vector<std::uint8_t> encode_embeddings(const Matrix& m, DType dtype) {
  const std::size_t width = dtype == DType::binary64 ? 8 : 4;
  std::vector<std::uint8_t> out;
  out.reserve(kEmbHeaderSize + m.size() * width + 4);
  for (char c : std::string_view("EMB1")) out.push_back(static_cast<std::uint8_t>(c));
  put_le<std::uint16_t>(out, kEmbVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  put_le<std::uint64_t>(out, m.rows());
  put_le<std::uint64_t>(out, m.cols());
  for (double x : m.data()) {
    if (dtype == DType::binary64) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
    } else {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }
  put_le<std::uint32_t>(out, crc32_of(out.data() + kEmbHeaderSize, out.size() - kEmbHeaderSize));
  return out;
}

Matrix decode_embeddings(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "EMB1", 4) != 0) {
    raise<DataError>(source, ": bad magic at byte offset 0 (expected \"EMB1\")");
  }
  if (bytes.size() < kEmbHeaderSize) {
    raise<DataError>(source, ": truncated header at byte offset ", bytes.size(), " (need ",
                     kEmbHeaderSize, " bytes)");
  }
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kEmbVersion) {
    raise<DataError>(source, ": unsupported version ", version, " at byte offset 4");
  }
  const std::uint8_t code = bytes[6];
  if (code > 1) raise<DataError>(source, ": unknown dtype code ", int{code}, " at byte offset 6");
  const auto dtype = static_cast<DType>(code);
  const auto rows = get_le<std::uint64_t>(bytes.data() + 7);
  const auto cols = get_le<std::uint64_t>(bytes.data() + 15);
  const std::size_t width = dtype == DType::binary64 ? 8 : 4;

  const std::size_t available = bytes.size() - kEmbHeaderSize;
  if (cols != 0 && rows > available / width / cols) {
    raise<DataError>(source, ": truncated payload at byte offset ", bytes.size(), " (header declares ",
                     rows, "x", cols, ")");
  }
  const std::size_t payload = static_cast<std::size_t>(rows * cols) * width;
  const std::size_t crc_offset = kEmbHeaderSize + payload;
  if (bytes.size() < crc_offset + 4) {
    raise<DataError>(source, ": truncated file at byte offset ", bytes.size(), " (expected ",
                     crc_offset + 4, " bytes)");
  }
  if (bytes.size() > crc_offset + 4) {
    raise<DataError>(source, ": ", bytes.size() - crc_offset - 4,
                     " unexpected trailing bytes at byte offset ", crc_offset + 4);
  }
  const auto stored = get_le<std::uint32_t>(bytes.data() + crc_offset);
  const auto actual = crc32_of(bytes.data() + kEmbHeaderSize, payload);
  if (stored != actual) {
    raise<DataError>(source, ": CRC mismatch at byte offset ", crc_offset, " (stored ", stored,
                     ", computed ", actual, ")");
  }

  std::vector<double> data(static_cast<std::size_t>(rows * cols));
  const std::uint8_t* p = bytes.data() + kEmbHeaderSize;
  for (std::size_t t = 0; t < data.size(); ++t, p += width) {
    data[t] = dtype == DType::binary64
                  ? std::bit_cast<double>(get_le<std::uint64_t>(p))
                  : static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p)));
  }
  return Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), std::move(data));
}

void write_embeddings(const std::filesystem::path& path, const Matrix& m, DType dtype) {
  const auto bytes = encode_embeddings(m, dtype);
  write_text(path, std::string(bytes.begin(), bytes.end()));
}

Matrix read_embeddings(const std::filesystem::path& path) {
  const std::string raw = read_text(path);
  return decode_embeddings(std::vector<std::uint8_t>(raw.begin(), raw.end()), path.string());
}

retrieval::KnowledgeBase parse_knowledge_base(const std::string& json_text,
                                              const KnowledgeBaseOptions& options,
                                              const std::string& source) {
  const ordered_json doc = parse_json(json_text, source);
  auto schema = [&](const auto&... what) -> void { raise<DataError>(source, ": ", what...); };

  if (!doc.is_object()) schema("knowledge base must be a JSON object");
  if (!doc.contains("dim") || !doc["dim"].is_number_unsigned()) {
    schema("missing or invalid \"dim\" (positive integer)");
  }
  const auto dim = doc["dim"].get<std::size_t>();
  if (dim == 0) schema("\"dim\" must be positive");
  if (!doc.contains("classes") || !doc["classes"].is_array()) schema("missing \"classes\" array");

  std::vector<retrieval::ClassRecord> classes;
  for (std::size_t j = 0; j < doc["classes"].size(); ++j) {
    const auto& c = doc["classes"][j];
    if (!c.is_object()) schema("class entry ", j, " is not an object");
    if (!c.contains("name") || !c["name"].is_string()) schema("class entry ", j, " has no name");
    retrieval::ClassRecord rec;
    rec.name = c["name"].get<std::string>();
    if (!c.contains("descriptions") || !c["descriptions"].is_array()) {
      schema("class '", rec.name, "' has no \"descriptions\" array");
    }
    for (const auto& d : c["descriptions"]) {
      if (!d.is_string()) schema("class '", rec.name, "' has a non-string description");
      rec.descriptions.push_back(d.get<std::string>());
    }

    if (c.contains("embeddings")) {
      const auto& e = c["embeddings"];
      if (!e.is_array()) schema("class '", rec.name, "' embeddings must be an array of rows");
      rec.embeddings = Matrix(e.size(), dim);
      for (std::size_t r = 0; r < e.size(); ++r) {
        if (!e[r].is_array() || e[r].size() != dim) {
          schema("class '", rec.name, "' embedding row ", r, " has ",
                 e[r].is_array() ? e[r].size() : 0, " values, expected dim ", dim);
        }
        for (std::size_t col = 0; col < dim; ++col) {
          if (!e[r][col].is_number()) schema("class '", rec.name, "' has a non-numeric embedding");
          rec.embeddings(r, col) = e[r][col].get<double>();
        }
      }
    } else {
      const auto it = options.sidecars.find(rec.name);
      if (it == options.sidecars.end()) {
        schema("class '", rec.name, "' has no inline embeddings and no sidecar file");
      }
      rec.embeddings = read_embeddings(it->second);
      if (rec.embeddings.cols() != dim) {
        raise<DataError>(it->second.string(), ": sidecar for class '", rec.name, "' has dimension ",
                         rec.embeddings.cols(), ", expected ", dim);
      }
    }
    if (rec.embeddings.rows() != rec.descriptions.size()) {
      schema("class '", rec.name, "' has ", rec.descriptions.size(), " descriptions but ",
             rec.embeddings.rows(), " embeddings");
    }
    if (options.normalize && rec.embeddings.rows() > 0) {
      rec.embeddings = l2_normalize_rows(rec.embeddings);
    }
    classes.push_back(std::move(rec));
  }
  try {
    return retrieval::KnowledgeBase(std::move(classes));
  } catch (const DataError& e) {
    raise<DataError>(source, ": ", e.what());
  }
}

retrieval::KnowledgeBase read_knowledge_base(const std::filesystem::path& path,
                                             const KnowledgeBaseOptions& options) {
  return parse_knowledge_base(read_text(path), options, path.string());
}

std::string knowledge_base_to_json(const retrieval::KnowledgeBase& kb) {
  ordered_json doc;
  doc["dim"] = kb.dim();
  doc["classes"] = ordered_json::array();
  for (const auto& c : kb.classes()) {
    ordered_json rec;
    rec["name"] = c.name;
    rec["descriptions"] = c.descriptions;
    ordered_json rows = ordered_json::array();
    for (std::size_t r = 0; r < c.embeddings.rows(); ++r) {
      const auto row = c.embeddings.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    rec["embeddings"] = std::move(rows);
    doc["classes"].push_back(std::move(rec));
  }
  return doc.dump() + "\n";
}

std::vector<std::size_t> parse_labels(const std::string& text,
                                      const std::vector<std::string>& class_names,
                                      const std::string& source) {
  std::vector<std::size_t> labels;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::size_t> blank_lines;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) {
      blank_lines.push_back(line_no);
      continue;
    }
    if (!blank_lines.empty()) raise<DataError>(source, ": blank line ", blank_lines.front());
    std::size_t index = class_names.size();
    for (std::size_t j = 0; j < class_names.size(); ++j) {
      if (class_names[j] == line) {
        index = j;
        break;
      }
    }
    if (index == class_names.size()) {
      std::size_t parsed = 0;
      const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), parsed);
      if (ec != std::errc{} || ptr != line.data() + line.size()) {
        raise<DataError>(source, ": line ", line_no, ": '", line, "' is neither a class name nor an index");
      }
      if (parsed >= class_names.size()) {
        raise<DataError>(source, ": line ", line_no, ": class index ", parsed, " out of range [0, ",
                         class_names.size(), ")");
      }
      index = parsed;
    }
    labels.push_back(index);
  }
  return labels;
}

std::vector<std::size_t> read_labels(const std::filesystem::path& path,
                                     const std::vector<std::string>& class_names) {
  return parse_labels(read_text(path), class_names, path.string());
}

ot::ClassMarginal parse_marginal(const std::string& json_text, const std::string& source) {
  const ordered_json doc = parse_json(json_text, source);
  if (!doc.is_array() || doc.empty()) raise<DataError>(source, ": marginal must be a nonempty JSON array");
  Vector weights;
  for (std::size_t j = 0; j < doc.size(); ++j) {
    if (!doc[j].is_number()) raise<DataError>(source, ": marginal entry ", j, " is not a number");
    const double w = doc[j].get<double>();
    if (w < 0.0) raise<DataError>(source, ": marginal entry ", j, " is negative (", w, ")");
    weights.push_back(w);
  }
  try {
    return ot::ClassMarginal::normalized(std::move(weights));
  } catch (const DataError& e) {
    raise<DataError>(source, ": ", e.what());
  }
}

ot::ClassMarginal read_marginal(const std::filesystem::path& path) {
  return parse_marginal(read_text(path), path.string());
}

std::string report_to_json(const RunReport& report, bool include_timing) {
  const ResolvedConfig& cfg = report.config;
  ordered_json doc;
  doc["mode"] = to_string(cfg.mode);

  ordered_json config;
  config["retrieval_k"] = cfg.retrieval_k;
  config["normalize"] = cfg.normalize;
  config["marginal"] = cfg.marginal_source;
  config["solver"] = {{"algorithm", ot::to_string(cfg.solver.algorithm)},
                      {"tau_ot", cfg.solver.tau_ot},
                      {"max_iterations", cfg.solver.max_iterations},
                      {"tolerance", cfg.solver.tolerance}};
  config["learn"] = {{"tau_learn", cfg.learn.tau_learn},
                     {"learning_rate", cfg.learn.learning_rate},
                     {"momentum", cfg.learn.momentum},
                     {"max_epochs", cfg.learn.max_epochs},
                     {"loss_tolerance", cfg.learn.loss_tolerance}};
  config["defaults_applied"] = cfg.defaults_applied;
  doc["config"] = std::move(config);

  doc["num_images"] = report.num_images;
  doc["num_classes"] = report.class_names.size();
  doc["dim"] = report.dim;
  doc["class_names"] = report.class_names;
  doc["predictions"] = report.predictions;

  if (report.accuracy) {
    ordered_json per_class = ordered_json::object();
    for (std::size_t j = 0; j < report.accuracy->per_class.size(); ++j) {
      const auto& v = report.accuracy->per_class[j];
      per_class[report.class_names.at(j)] = v ? ordered_json(*v) : ordered_json(nullptr);
    }
    doc["accuracy"] = {{"overall", report.accuracy->overall}, {"per_class", per_class}};
  }
  if (report.retrieval) {
    ordered_json sel = ordered_json::object();
    for (std::size_t j = 0; j < report.retrieval->size(); ++j) {
      sel[report.class_names.at(j)] = (*report.retrieval)[j];
    }
    doc["retrieval"] = std::move(sel);
  }
  if (report.solver) {
    const auto& s = *report.solver;
    doc["solver"] = {{"iterations", s.iterations},
                     {"row_violation", s.row_violation},
                     {"col_violation", s.col_violation},
                     {"converged", s.converged},
                     {"objective", s.objective}};
  }
  if (report.learn) {
    const auto& l = *report.learn;
    doc["learn"] = {{"epochs_run", l.epochs_run},
                    {"stop_reason", learner::to_string(l.stop_reason)},
                    {"initial_loss", l.initial_loss},
                    {"final_loss", l.final_loss}};
  }
  if (include_timing) doc["timing"] = {{"wall_time_seconds", report.wall_time_seconds}};
  return doc.dump(2) + "\n";
}

void write_report(const RunReport& report, const std::filesystem::path& path) {
  write_text(path, report_to_json(report));
}

std::string predictions_to_csv(const std::vector<std::size_t>& predictions,
                               const std::vector<std::string>& class_names) {
  std::string out = "index,predicted_class_name\n";
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += csv_field(class_names.at(predictions[i]));
    out += '\n';
  }
  return out;
}

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<std::size_t>& predictions,
                           const std::vector<std::string>& class_names) {
  write_text(path, predictions_to_csv(predictions, class_names));
}

std::vector<std::size_t> parse_predictions_csv(const std::string& text,
                                               const std::vector<std::string>& class_names,
                                               const std::string& source) {
  // Minimal RFC 4180 reader: quoted fields may contain commas, doubled quotes
  // and line breaks.
  std::vector<std::vector<std::string>> records(1);
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t t = 0; t < text.size(); ++t) {
    const char c = text[t];
    if (quoted) {
      if (c == '"' && t + 1 < text.size() && text[t + 1] == '"') {
        field += '"';
        ++t;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      records.back().push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && t + 1 < text.size() && text[t + 1] == '\n') ++t;
      records.back().push_back(std::move(field));
      field.clear();
      field_started = false;
      records.emplace_back();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) raise<DataError>(source, ": unterminated quoted field");
  if (field_started || !records.back().empty()) records.back().push_back(std::move(field));
  if (records.back().empty()) records.pop_back();

  if (records.empty() || records.front() != std::vector<std::string>{"index", "predicted_class_name"}) {
    raise<DataError>(source, ": missing header 'index,predicted_class_name'");
  }
  std::vector<std::size_t> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != 2) raise<DataError>(source, ": record ", r, " has ", rec.size(), " fields");
    if (rec[0] != std::to_string(r - 1)) {
      raise<DataError>(source, ": record ", r, " has index '", rec[0], "', expected ", r - 1);
    }
    std::size_t j = 0;
    while (j < class_names.size() && class_names[j] != rec[1]) ++j;
    if (j == class_names.size()) raise<DataError>(source, ": unknown class name '", rec[1], "'");
    out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> read_predictions_csv(const std::filesystem::path& path,
                                              const std::vector<std::string>& class_names) {
  return parse_predictions_csv(read_text(path), class_names, path.string());
}

}  // namespace kpl::io
