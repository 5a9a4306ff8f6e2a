#include "embkit/datamodel.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "embkit/binary_io.hpp"
#include "embkit/error.hpp"
#include "embkit/text.hpp"

namespace embkit {
namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kMatrixVersion = 1;

std::string at(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

const Json& field(const Json& j, const char* key, const fs::path& path, std::size_t line) {
  if (!j.is_object()) throw ParseError(at(path, line) + "record is not a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(at(path, line) + "missing field \"" + key + "\"");
  return *it;
}

std::string string_field(const Json& j, const char* key, const fs::path& path, std::size_t line) {
  const Json& v = field(j, key, path, line);
  if (!v.is_string()) throw ParseError(at(path, line) + "field \"" + key + "\" must be a string");
  return v.get<std::string>();
}

double number_field(const Json& j, const char* key, const fs::path& path, std::size_t line) {
  const Json& v = field(j, key, path, line);
  if (!v.is_number()) throw ParseError(at(path, line) + "field \"" + key + "\" must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ParseError(at(path, line) + "field \"" + key + "\" is not finite");
  return x;
}

long long integer_field(const Json& j, const char* key, const fs::path& path, std::size_t line) {
  const Json& v = field(j, key, path, line);
  if (!v.is_number_integer()) throw ParseError(at(path, line) + "field \"" + key + "\" must be an integer");
  return v.get<long long>();
}

std::vector<std::string> string_list_field(const Json& j, const char* key, const fs::path& path,
                                           std::size_t line) {
  const Json& v = field(j, key, path, line);
  if (!v.is_array()) throw ParseError(at(path, line) + "field \"" + key + "\" must be an array");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) throw ParseError(at(path, line) + "field \"" + key + "\" must hold strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::vector<LabeledText> load_labeled_texts(const fs::path& path) {
  std::vector<LabeledText> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t line) {
    out.push_back({string_field(j, "text", path, line), string_field(j, "label", path, line)});
  });
  return out;
}

void write_labeled_texts(const std::vector<LabeledText>& items, const fs::path& path) {
  JsonlWriter w(path);
  for (const auto& item : items) w.write(OrderedJson{{"text", item.text}, {"label", item.label}});
  w.close();
}

struct DatasetPaths {
  fs::path stem;  // dir/name.slug
  std::string name;
};

DatasetPaths resolve_paths(const fs::path& path, TaskKind kind) {
  const std::string slug(task_kind_slug(kind));
  std::string file = path.filename().string();
  if (file.ends_with(".jsonl")) file.resize(file.size() - 6);
  for (const char* part : {".corpus", ".queries", ".qrels", ".train", ".test"}) {
    if (file.ends_with(part)) {
      file.resize(file.size() - std::string_view(part).size());
      break;
    }
  }
  const std::string suffix = "." + slug;
  if (!file.ends_with(suffix)) {
    throw ValidationError(path.string() + ": file name does not follow <name>." + slug + "[.<part>].jsonl");
  }
  DatasetPaths out;
  out.name = file.substr(0, file.size() - suffix.size());
  out.stem = path.parent_path() / file;
  return out;
}

fs::path part_path(const fs::path& stem, std::string_view part) {
  std::string f = stem.filename().string();
  if (!part.empty()) f += "." + std::string(part);
  return stem.parent_path() / (f + ".jsonl");
}

void require_nonempty(bool empty, const std::string& name) {
  if (empty) throw ValidationError(name + ": empty dataset");
}

}  // namespace

void validate(const TextPair& pair) {
  if (text::trim(pair.query).empty()) throw ValidationError("text pair has blank query");
  if (text::trim(pair.passage).empty()) throw ValidationError("text pair has blank passage");
  if (pair.score) {
    const double s = *pair.score;
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw ValidationError("text pair score " + std::to_string(s) + " outside [0,1]");
    }
  }
}

TextPair text_pair_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("text pair record is not a JSON object");
  TextPair p;
  auto get_str = [&](const char* key, bool required) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      if (required) throw ParseError(std::string("text pair missing field \"") + key + "\"");
      return {};
    }
    if (!it->is_string()) throw ParseError(std::string("text pair field \"") + key + "\" must be a string");
    return it->get<std::string>();
  };
  p.query = get_str("query", true);
  p.passage = get_str("passage", true);
  p.source = get_str("source", false);
  if (auto it = j.find("score"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw ParseError("text pair field \"score\" must be a number");
    p.score = it->get<double>();
  }
  validate(p);
  return p;
}

OrderedJson to_json(const TextPair& pair) {
  OrderedJson j{{"query", pair.query}, {"passage", pair.passage}, {"source", pair.source}};
  if (pair.score) j["score"] = *pair.score;
  return j;
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), data_(rows * dim, 0.0F) {
  if (dim == 0) throw ValidationError("embedding matrix dim must be >= 1");
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data, bool normalized)
    : rows_(rows), dim_(dim), data_(std::move(data)), normalized_(normalized) {
  if (dim == 0) throw ValidationError("embedding matrix dim must be >= 1");
  if (data_.size() != rows * dim) {
    throw ValidationError("embedding matrix payload has " + std::to_string(data_.size()) + " values, expected " +
                          std::to_string(rows * dim));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw ValidationError("embedding matrix entry (" + std::to_string(i / dim) + "," + std::to_string(i % dim) +
                            ") is not finite");
    }
  }
  if (normalized_) {
    for (std::size_t r = 0; r < rows_; ++r) {
      double sq = 0.0;
      for (float x : row(r)) sq += static_cast<double>(x) * x;
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw ValidationError("embedding matrix row " + std::to_string(r) + " is not unit-norm");
      }
    }
  }
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
  std::vector<float> out(m.data());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sq = 0.0;
    for (float x : m.row(r)) sq += static_cast<double>(x) * x;
    const double norm = std::sqrt(sq);
    if (norm == 0.0) throw ValidationError("cannot normalize zero row " + std::to_string(r));
    if (std::abs(norm - 1.0) <= 1e-7) continue;
    float* dst = out.data() + r * m.dim();
    for (std::size_t c = 0; c < m.dim(); ++c) dst[c] = static_cast<float>(static_cast<double>(dst[c]) / norm);
  }
  return EmbeddingMatrix(m.rows(), m.dim(), std::move(out), true);
}

void write_embedding_matrix(const EmbeddingMatrix& m, const fs::path& path) {
  std::string bytes = "EMBK";
  binio::put_u32(bytes, kMatrixVersion);
  binio::put_u32(bytes, static_cast<std::uint32_t>(m.rows()));
  binio::put_u32(bytes, static_cast<std::uint32_t>(m.dim()));
  for (float x : m.data()) binio::put_f32(bytes, x);
  write_file(path, bytes);
}

EmbeddingMatrix read_embedding_matrix(const fs::path& path) {
  const std::string bytes = read_file(path);
  binio::Reader r(bytes, path.string());
  r.expect_magic("EMBK");
  const auto version = r.u32();
  if (version != kMatrixVersion) {
    throw FormatError(path.string() + ": unsupported matrix version " + std::to_string(version));
  }
  const std::size_t n = r.u32();
  const std::size_t d = r.u32();
  if (d == 0) throw FormatError(path.string() + ": dimension is zero");
  if (r.remaining() != n * d * 4) {
    throw FormatError(path.string() + ": header declares " + std::to_string(n) + "x" + std::to_string(d) +
                      " but payload holds " + std::to_string(r.remaining()) + " bytes");
  }
  std::vector<float> data(n * d);
  for (auto& x : data) x = r.f32();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) throw FormatError(path.string() + ": non-finite value at index " + std::to_string(i));
  }
  bool unit = n > 0;
  for (std::size_t row = 0; unit && row < n; ++row) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += static_cast<double>(data[row * d + c]) * data[row * d + c];
    unit = std::abs(std::sqrt(sq) - 1.0) <= 1e-6;
  }
  return EmbeddingMatrix(n, d, std::move(data), unit);
}

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Retrieval: return "Retrieval";
    case TaskKind::Reranking: return "Reranking";
    case TaskKind::STS: return "STS";
    case TaskKind::Classification: return "Classification";
    case TaskKind::PairClassification: return "PairClassification";
    case TaskKind::Clustering: return "Clustering";
  }
  return "?";
}

std::string_view task_kind_slug(TaskKind kind) {
  switch (kind) {
    case TaskKind::Retrieval: return "retrieval";
    case TaskKind::Reranking: return "reranking";
    case TaskKind::STS: return "sts";
    case TaskKind::Classification: return "classification";
    case TaskKind::PairClassification: return "pairclassification";
    case TaskKind::Clustering: return "clustering";
  }
  return "?";
}

std::string_view task_kind_column(TaskKind kind) {
  switch (kind) {
    case TaskKind::Retrieval: return "Retrieval";
    case TaskKind::Reranking: return "Re-rank";
    case TaskKind::STS: return "STS";
    case TaskKind::Classification: return "CLF";
    case TaskKind::PairClassification: return "PairCLF";
    case TaskKind::Clustering: return "Cluster";
  }
  return "?";
}

std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (TaskKind k : kAllTaskKinds) {
    if (s == task_kind_slug(k) || s == task_kind_name(k)) return k;
  }
  return std::nullopt;
}

void validate(const TaskDataset& ds) {
  const std::string& name = ds.name;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RetrievalData>) {
          require_nonempty(p.corpus.empty() || p.queries.empty(), name);
          std::set<std::string> doc_ids;
          for (const auto& d : p.corpus) {
            if (!doc_ids.insert(d.id).second) throw ValidationError(name + ": duplicate corpus id \"" + d.id + "\"");
          }
          std::set<std::string> query_ids;
          for (const auto& q : p.queries) {
            if (!query_ids.insert(q.id).second) throw ValidationError(name + ": duplicate query id \"" + q.id + "\"");
          }
          for (const auto& [qid, docs] : p.qrels) {
            if (!query_ids.contains(qid)) throw ValidationError(name + ": qrels query id \"" + qid + "\" not in queries");
            for (const auto& [docid, rel] : docs) {
              if (!doc_ids.contains(docid)) {
                throw ValidationError(name + ": qrels doc id \"" + docid + "\" not in corpus");
              }
              if (rel < 0) throw ValidationError(name + ": negative relevance for (" + qid + ", " + docid + ")");
            }
          }
        } else if constexpr (std::is_same_v<T, RerankingData>) {
          require_nonempty(p.entries.empty(), name);
          for (std::size_t i = 0; i < p.entries.size(); ++i) {
            if (p.entries[i].positive.empty() || p.entries[i].negative.empty()) {
              throw ValidationError(name + ": reranking entry " + std::to_string(i) + " lacks a positive or negative");
            }
          }
        } else if constexpr (std::is_same_v<T, StsData>) {
          require_nonempty(p.pairs.empty(), name);
          for (std::size_t i = 0; i < p.pairs.size(); ++i) {
            if (!std::isfinite(p.pairs[i].score)) {
              throw ValidationError(name + ": STS pair " + std::to_string(i) + " has non-finite score");
            }
          }
        } else if constexpr (std::is_same_v<T, ClassificationData>) {
          require_nonempty(p.train.empty() || p.test.empty(), name);
        } else if constexpr (std::is_same_v<T, PairClassificationData>) {
          require_nonempty(p.pairs.empty(), name);
          for (std::size_t i = 0; i < p.pairs.size(); ++i) {
            if (p.pairs[i].label != 0 && p.pairs[i].label != 1) {
              throw ValidationError(name + ": pair " + std::to_string(i) + " label must be 0 or 1");
            }
          }
        } else if constexpr (std::is_same_v<T, ClusteringData>) {
          require_nonempty(p.items.empty(), name);
        }
      },
      ds.payload);
}

TaskDataset load_task_dataset(const fs::path& path, TaskKind kind) {
  const auto paths = resolve_paths(path, kind);
  TaskDataset ds;
  ds.kind = kind;
  ds.name = paths.name;

  switch (kind) {
    case TaskKind::Retrieval: {
      RetrievalData data;
      auto load_docs = [](const fs::path& p, std::vector<Document>& out) {
        for_each_jsonl(p, [&](const Json& j, std::size_t line) {
          out.push_back({string_field(j, "id", p, line), string_field(j, "text", p, line)});
        });
      };
      load_docs(part_path(paths.stem, "corpus"), data.corpus);
      load_docs(part_path(paths.stem, "queries"), data.queries);
      const fs::path qrels = part_path(paths.stem, "qrels");
      for_each_jsonl(qrels, [&](const Json& j, std::size_t line) {
        const auto rel = integer_field(j, "rel", qrels, line);
        if (rel < 0) throw ParseError(at(qrels, line) + "relevance must be >= 0");
        data.qrels[string_field(j, "qid", qrels, line)][string_field(j, "docid", qrels, line)] = static_cast<int>(rel);
      });
      ds.payload = std::move(data);
      break;
    }
    case TaskKind::Reranking: {
      RerankingData data;
      const fs::path p = part_path(paths.stem, "");
      for_each_jsonl(p, [&](const Json& j, std::size_t line) {
        RerankingEntry e{string_field(j, "query", p, line), string_list_field(j, "positive", p, line),
                         string_list_field(j, "negative", p, line)};
        // Entries without both a positive and a negative cannot be scored.
        if (!e.positive.empty() && !e.negative.empty()) data.entries.push_back(std::move(e));
      });
      ds.payload = std::move(data);
      break;
    }
    case TaskKind::STS: {
      StsData data;
      const fs::path p = part_path(paths.stem, "");
      for_each_jsonl(p, [&](const Json& j, std::size_t line) {
        data.pairs.push_back(
            {string_field(j, "s1", p, line), string_field(j, "s2", p, line), number_field(j, "score", p, line)});
      });
      ds.payload = std::move(data);
      break;
    }
    case TaskKind::Classification: {
      ClassificationData data;
      data.train = load_labeled_texts(part_path(paths.stem, "train"));
      data.test = load_labeled_texts(part_path(paths.stem, "test"));
      ds.payload = std::move(data);
      break;
    }
    case TaskKind::PairClassification: {
      PairClassificationData data;
      const fs::path p = part_path(paths.stem, "");
      for_each_jsonl(p, [&](const Json& j, std::size_t line) {
        const auto label = integer_field(j, "label", p, line);
        if (label != 0 && label != 1) throw ParseError(at(p, line) + "label must be 0 or 1");
        data.pairs.push_back({string_field(j, "s1", p, line), string_field(j, "s2", p, line), static_cast<int>(label)});
      });
      ds.payload = std::move(data);
      break;
    }
    case TaskKind::Clustering: {
      ClusteringData data;
      data.items = load_labeled_texts(part_path(paths.stem, ""));
      ds.payload = std::move(data);
      break;
    }
  }
  validate(ds);
  return ds;
}

void write_task_dataset(const TaskDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path stem = dir / (ds.name + "." + std::string(task_kind_slug(ds.kind)));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RetrievalData>) {
          JsonlWriter corpus(part_path(stem, "corpus"));
          for (const auto& d : p.corpus) corpus.write(OrderedJson{{"id", d.id}, {"text", d.text}});
          corpus.close();
          JsonlWriter queries(part_path(stem, "queries"));
          for (const auto& q : p.queries) queries.write(OrderedJson{{"id", q.id}, {"text", q.text}});
          queries.close();
          JsonlWriter qrels(part_path(stem, "qrels"));
          for (const auto& [qid, docs] : p.qrels) {
            for (const auto& [docid, rel] : docs) qrels.write(OrderedJson{{"qid", qid}, {"docid", docid}, {"rel", rel}});
          }
          qrels.close();
        } else if constexpr (std::is_same_v<T, RerankingData>) {
          JsonlWriter w(part_path(stem, ""));
          for (const auto& e : p.entries) {
            w.write(OrderedJson{{"query", e.query}, {"positive", e.positive}, {"negative", e.negative}});
          }
          w.close();
        } else if constexpr (std::is_same_v<T, StsData>) {
          JsonlWriter w(part_path(stem, ""));
          for (const auto& s : p.pairs) w.write(OrderedJson{{"s1", s.s1}, {"s2", s.s2}, {"score", s.score}});
          w.close();
        } else if constexpr (std::is_same_v<T, ClassificationData>) {
          write_labeled_texts(p.train, part_path(stem, "train"));
          write_labeled_texts(p.test, part_path(stem, "test"));
        } else if constexpr (std::is_same_v<T, PairClassificationData>) {
          JsonlWriter w(part_path(stem, ""));
          for (const auto& s : p.pairs) w.write(OrderedJson{{"s1", s.s1}, {"s2", s.s2}, {"label", s.label}});
          w.close();
        } else if constexpr (std::is_same_v<T, ClusteringData>) {
          write_labeled_texts(p.items, part_path(stem, ""));
        }
      },
      ds.payload);
}

void compute_averages(EvaluationReport& report) {
  std::map<TaskKind, std::pair<double, std::size_t>> sums;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& row : report.per_dataset) {
    if (row.failed) continue;
    auto& [s, n] = sums[row.kind];
    s += row.score;
    ++n;
    total += row.score;
    ++count;
  }
  report.category_averages.clear();
  for (const auto& [kind, sn] : sums) report.category_averages[kind] = sn.first / static_cast<double>(sn.second);
  report.overall_average = count == 0 ? 0.0 : total / static_cast<double>(count);
}

OrderedJson to_json(const EvaluationReport& report) {
  OrderedJson rows = OrderedJson::array();
  for (const auto& row : report.per_dataset) {
    OrderedJson r{{"dataset", row.dataset},
                  {"kind", std::string(task_kind_name(row.kind))},
                  {"metric", row.metric},
                  {"status", row.failed ? "failed" : "ok"}};
    if (row.failed) {
      r["score"] = nullptr;
      r["error"] = row.error;
    } else {
      r["score"] = row.score;
    }
    rows.push_back(std::move(r));
  }
  OrderedJson columns = OrderedJson::array();
  OrderedJson table = OrderedJson::object();
  for (TaskKind k : kAllTaskKinds) {
    const std::string col(task_kind_column(k));
    columns.push_back(col);
    auto it = report.category_averages.find(k);
    table[col] = it == report.category_averages.end() ? OrderedJson(nullptr) : OrderedJson(it->second);
  }
  columns.push_back("Average");
  table["Average"] = report.overall_average;
  std::size_t failed = 0;
  for (const auto& row : report.per_dataset) failed += row.failed ? 1 : 0;
  return OrderedJson{{"columns", columns},
                     {"category_averages", table},
                     {"overall_average", report.overall_average},
                     {"failed", failed},
                     {"per_dataset", rows}};
}

void for_each_jsonl(const fs::path& path, const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ParseError(at(path, lineno) + "malformed JSON (" + e.what() + ")");
    }
    try {
      fn(j, lineno);
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (msg.starts_with(path.string() + ":")) throw ParseError(msg);
      throw ParseError(at(path, lineno) + msg);
    } catch (const Json::exception& e) {
      throw ParseError(at(path, lineno) + e.what());
    }
  }
}

JsonlWriter::JsonlWriter(const fs::path& path) : path_(path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  file_ = std::fopen(path.c_str(), "wb");
  if (file_ == nullptr) throw Error("cannot open " + path.string() + " for writing");
}

JsonlWriter::~JsonlWriter() {
  if (file_ != nullptr) std::fclose(file_);
}

void JsonlWriter::write(const OrderedJson& record) {
  const std::string line = record.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size()) throw Error("write failed: " + path_.string());
}

void JsonlWriter::close() {
  if (file_ == nullptr) return;
  const int rc = std::fclose(file_);
  file_ = nullptr;
  if (rc != 0) throw Error("close failed: " + path_.string());
}

std::vector<TextPair> read_text_pairs(const fs::path& path) {
  std::vector<TextPair> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(text_pair_from_json(j)); });
  return out;
}

void write_text_pairs(std::span<const TextPair> pairs, const fs::path& path) {
  JsonlWriter w(path);
  for (const auto& p : pairs) w.write(to_json(p));
  w.close();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace embkit
