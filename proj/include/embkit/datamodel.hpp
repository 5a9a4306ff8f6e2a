#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace embkit {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// One (query-side, passage-side) training instance.
struct TextPair {
  std::string query;
  std::string passage;
  std::string source;
  std::optional<double> score;

  bool operator==(const TextPair&) const = default;
};

// Throws ValidationError if either side is blank or the score is outside [0,1].
void validate(const TextPair& pair);

TextPair text_pair_from_json(const Json& j);
OrderedJson to_json(const TextPair& pair);

// Dense row-major n x d matrix of f32 embeddings.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim);
  // Validates finiteness and, when `normalized` is set, unit row norms.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data, bool normalized = false);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool normalized() const { return normalized_; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  const std::vector<float>& data() const { return data_; }

  // Shape and payload only; the normalized flag is derived state.
  bool operator==(const EmbeddingMatrix& other) const {
    return rows_ == other.rows_ && dim_ == other.dim_ && data_ == other.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 1;
  std::vector<float> data_;
  bool normalized_ = false;
};

// Rows whose norm is already within 1e-7 of 1 are copied unchanged, which
// makes the operation exactly idempotent on its own output.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m);

// "EMBK" | u32 version | u32 n | u32 d | n*d f32, all little-endian.
// The reader sets the normalized flag when every row is unit-norm within 1e-6.
void write_embedding_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path);

enum class TaskKind { Retrieval, Reranking, STS, Classification, PairClassification, Clustering };

inline constexpr TaskKind kAllTaskKinds[] = {TaskKind::Retrieval,      TaskKind::STS,
                                             TaskKind::PairClassification, TaskKind::Classification,
                                             TaskKind::Reranking,      TaskKind::Clustering};

// "Retrieval", "Reranking", ...
std::string_view task_kind_name(TaskKind kind);
// Lowercase token used in file names: "retrieval", "pairclassification", ...
std::string_view task_kind_slug(TaskKind kind);
// Leaderboard column: "Retrieval", "STS", "PairCLF", "CLF", "Re-rank", "Cluster".
std::string_view task_kind_column(TaskKind kind);
std::optional<TaskKind> parse_task_kind(std::string_view s);

struct Document {
  std::string id;
  std::string text;
  bool operator==(const Document&) const = default;
};

struct RetrievalData {
  std::vector<Document> corpus;
  std::vector<Document> queries;
  // query id -> doc id -> graded relevance
  std::map<std::string, std::map<std::string, int>> qrels;
  bool operator==(const RetrievalData&) const = default;
};

struct RerankingEntry {
  std::string query;
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  bool operator==(const RerankingEntry&) const = default;
};
struct RerankingData {
  std::vector<RerankingEntry> entries;
  bool operator==(const RerankingData&) const = default;
};

struct StsPair {
  std::string s1;
  std::string s2;
  double score = 0.0;
  bool operator==(const StsPair&) const = default;
};
struct StsData {
  std::vector<StsPair> pairs;
  bool operator==(const StsData&) const = default;
};

struct LabeledText {
  std::string text;
  std::string label;
  bool operator==(const LabeledText&) const = default;
};
struct ClassificationData {
  std::vector<LabeledText> train;
  std::vector<LabeledText> test;
  bool operator==(const ClassificationData&) const = default;
};

struct LabeledPair {
  std::string s1;
  std::string s2;
  int label = 0;
  bool operator==(const LabeledPair&) const = default;
};
struct PairClassificationData {
  std::vector<LabeledPair> pairs;
  bool operator==(const PairClassificationData&) const = default;
};

struct ClusteringData {
  std::vector<LabeledText> items;
  bool operator==(const ClusteringData&) const = default;
};

using TaskPayload = std::variant<RetrievalData, RerankingData, StsData, ClassificationData,
                                 PairClassificationData, ClusteringData>;

struct TaskDataset {
  TaskKind kind = TaskKind::Retrieval;
  std::string name;
  TaskPayload payload;
  bool operator==(const TaskDataset&) const = default;
};

// Re-checks every TaskDataset invariant; throws ValidationError naming the offending id.
void validate(const TaskDataset& ds);

// File layout: <dir>/<name>.<kind-slug>[.<part>].jsonl where retrieval has parts
// corpus/queries/qrels and classification has parts train/test.
// `path` may be any part file or the bare "<dir>/<name>.<kind-slug>" stem.
TaskDataset load_task_dataset(const std::filesystem::path& path, TaskKind kind);
void write_task_dataset(const TaskDataset& ds, const std::filesystem::path& dir);

struct DatasetScore {
  std::string dataset;
  TaskKind kind = TaskKind::Retrieval;
  std::string metric;
  double score = 0.0;
  bool failed = false;
  std::string error;
};

struct EvaluationReport {
  std::vector<DatasetScore> per_dataset;
  std::map<TaskKind, double> category_averages;
  double overall_average = 0.0;
};

// Fills category and overall averages from per_dataset, skipping failed rows.
void compute_averages(EvaluationReport& report);

OrderedJson to_json(const EvaluationReport& report);

// JSONL helpers. The callback receives the parsed object and 1-based line number;
// blank lines are skipped.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

// Sequential JSONL writer; each record is dumped on its own line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  ~JsonlWriter();
  JsonlWriter(const JsonlWriter&) = delete;
  JsonlWriter& operator=(const JsonlWriter&) = delete;

  void write(const OrderedJson& record);
  void close();

 private:
  std::FILE* file_ = nullptr;
  std::filesystem::path path_;
};

std::vector<TextPair> read_text_pairs(const std::filesystem::path& path);
void write_text_pairs(std::span<const TextPair> pairs, const std::filesystem::path& path);

void write_file(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace embkit
