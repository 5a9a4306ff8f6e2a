#include "embkit/evalsuite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

#include "embkit/encoder.hpp"
#include "embkit/error.hpp"
#include "embkit/metrics.hpp"
#include "embkit/rng.hpp"

namespace embkit::eval {
namespace fs = std::filesystem;

namespace {

EmbeddingMatrix encode_normalized(const EncoderHandle& enc, std::span<const std::string> texts, Side side) {
  EmbeddingMatrix m = enc.encode(texts, side);
  if (m.rows() != texts.size()) {
    throw ValidationError("encoder returned " + std::to_string(m.rows()) + " rows for " +
                          std::to_string(texts.size()) + " texts");
  }
  return normalize_rows(m);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

std::vector<double> to_double_rows(const EmbeddingMatrix& m) {
  return {m.data().begin(), m.data().end()};
}

std::string index_id(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 8 ? 8 - s.size() : 0, '0') + s;
}

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(const double* x, const std::vector<double>& centers, std::size_t k, std::size_t dim,
                    double* best_dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d = squared_distance(x, centers.data() + c * dim, dim);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best_dist != nullptr) *best_dist = best_d;
  return best;
}

}  // namespace

EmbeddingMatrix InstructedEncoder::encode(std::span<const std::string> texts, Side side) const {
  if (side != Side::Query || instruction_.empty()) return inner_.encode(texts, side);
  std::vector<std::string> prefixed;
  prefixed.reserve(texts.size());
  for (const auto& t : texts) prefixed.push_back(encoder::prefix_instruction(instruction_, t));
  return inner_.encode(prefixed, side);
}

TaskResult run_retrieval(const RetrievalData& ds, const EncoderHandle& enc, std::size_t k) {
  if (k == 0) throw ValidationError("retrieval: k must be >= 1");
  std::vector<std::string> doc_texts;
  doc_texts.reserve(ds.corpus.size());
  for (const auto& d : ds.corpus) doc_texts.push_back(d.text);

  // Only queries with at least one judged-relevant document are scored.
  std::vector<const Document*> scored;
  for (const auto& q : ds.queries) {
    auto it = ds.qrels.find(q.id);
    if (it == ds.qrels.end()) continue;
    const bool any = std::any_of(it->second.begin(), it->second.end(), [](const auto& kv) { return kv.second > 0; });
    if (any) scored.push_back(&q);
  }
  if (scored.empty()) throw MetricError("retrieval: no query has a judged relevant document");

  std::vector<std::string> query_texts;
  for (const auto* q : scored) query_texts.push_back(q->text);

  const EmbeddingMatrix docs = encode_normalized(enc, doc_texts, Side::Passage);
  const EmbeddingMatrix queries = encode_normalized(enc, query_texts, Side::Query);
  if (docs.dim() != queries.dim()) {
    throw ValidationError("retrieval: encoder dim differs between query (" + std::to_string(queries.dim()) +
                          ") and passage (" + std::to_string(docs.dim()) + ") sides");
  }

  const std::size_t cutoff = std::min(k, ds.corpus.size());
  double sum = 0.0;
  std::vector<std::pair<double, std::size_t>> scores(ds.corpus.size());
  for (std::size_t qi = 0; qi < scored.size(); ++qi) {
    const auto q = queries.row(qi);
    for (std::size_t d = 0; d < ds.corpus.size(); ++d) scores[d] = {dot(q, docs.row(d)), d};
    std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(cutoff), scores.end(),
                      [&](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return ds.corpus[a.second].id < ds.corpus[b.second].id;
                      });
    const auto& judged = ds.qrels.at(scored[qi]->id);
    std::vector<int> rels;
    rels.reserve(cutoff);
    for (std::size_t r = 0; r < cutoff; ++r) {
      auto it = judged.find(ds.corpus[scores[r].second].id);
      rels.push_back(it == judged.end() ? 0 : it->second);
    }
    std::vector<int> ideal;
    for (const auto& [docid, rel] : judged) ideal.push_back(rel);
    sum += metrics::ndcg_at_k(rels, ideal, k);
  }
  TaskResult out;
  out.metric = "ndcg_at_" + std::to_string(k);
  out.score = sum / static_cast<double>(scored.size());
  out.extras = OrderedJson{{"k", k}, {"queries_scored", scored.size()}, {"corpus_size", ds.corpus.size()}};
  return out;
}

TaskResult run_reranking(const RerankingData& ds, const EncoderHandle& enc) {
  std::vector<std::string> queries;
  std::vector<std::string> candidates;
  std::vector<std::size_t> offsets{0};
  for (const auto& e : ds.entries) {
    queries.push_back(e.query);
    for (const auto& p : e.positive) candidates.push_back(p);
    for (const auto& n : e.negative) candidates.push_back(n);
    offsets.push_back(candidates.size());
  }
  if (queries.empty()) throw MetricError("reranking: no entries");
  const EmbeddingMatrix q = encode_normalized(enc, queries, Side::Query);
  const EmbeddingMatrix c = encode_normalized(enc, candidates, Side::Passage);

  std::vector<std::vector<int>> per_query;
  per_query.reserve(ds.entries.size());
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    std::vector<metrics::RankedItem> items;
    for (std::size_t j = offsets[i]; j < offsets[i + 1]; ++j) {
      const std::size_t local = j - offsets[i];
      items.push_back({index_id(local), dot(q.row(i), c.row(j)), local < e.positive.size() ? 1 : 0});
    }
    per_query.push_back(metrics::RankedList(std::move(items)).relevances());
  }
  TaskResult out;
  out.metric = "map";
  out.score = metrics::mean_average_precision(per_query);
  out.extras = OrderedJson{{"queries", ds.entries.size()}};
  return out;
}

TaskResult run_sts(const StsData& ds, const EncoderHandle& enc) {
  if (ds.pairs.size() < 2) throw MetricError("STS: need at least two pairs");
  std::vector<std::string> a;
  std::vector<std::string> b;
  std::vector<double> gold;
  for (const auto& p : ds.pairs) {
    a.push_back(p.s1);
    b.push_back(p.s2);
    gold.push_back(p.score);
  }
  const EmbeddingMatrix ea = encode_normalized(enc, a, Side::Passage);
  const EmbeddingMatrix eb = encode_normalized(enc, b, Side::Passage);
  std::vector<double> sims(ds.pairs.size());
  for (std::size_t i = 0; i < sims.size(); ++i) sims[i] = dot(ea.row(i), eb.row(i));
  TaskResult out;
  out.metric = "spearman";
  try {
    out.score = metrics::spearman(sims, gold);
  } catch (const MetricError& e) {
    throw MetricError(std::string("STS: ") + e.what());
  }
  out.extras = OrderedJson{{"pairs", ds.pairs.size()}};
  return out;
}

ProbeFit fit_probe(std::span<const double> train, std::size_t dim, std::span<const std::string> labels,
                   const ProbeConfig& cfg) {
  const std::size_t n = labels.size();
  if (n == 0 || train.size() != n * dim) throw ValidationError("probe: feature/label shape mismatch");
  ProbeFit fit;
  std::set<std::string> uniq(labels.begin(), labels.end());
  if (uniq.size() < 2) throw ValidationError("classification: training split has a single class");
  fit.classes.assign(uniq.begin(), uniq.end());
  const std::size_t nc = fit.classes.size();
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<std::size_t>(std::lower_bound(fit.classes.begin(), fit.classes.end(), labels[i]) -
                                    fit.classes.begin());
  }
  fit.mean.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < dim; ++a) fit.mean[a] += train[i * dim + a];
  }
  for (auto& m : fit.mean) m /= static_cast<double>(n);
  std::vector<double> x(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < dim; ++a) x[i * dim + a] = train[i * dim + a] - fit.mean[a];
  }

  fit.weights.assign(dim * nc, 0.0);
  fit.bias.assign(nc, 0.0);
  std::vector<double> probs(nc);
  std::vector<double> gw(dim * nc);
  std::vector<double> gb(nc);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < cfg.max_iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.data() + i * dim;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < nc; ++c) {
        double z = fit.bias[c];
        for (std::size_t a = 0; a < dim; ++a) z += xi[a] * fit.weights[a * nc + c];
        probs[c] = z;
        mx = std::max(mx, z);
      }
      double sum = 0.0;
      for (auto& p : probs) {
        p = std::exp(p - mx);
        sum += p;
      }
      for (std::size_t c = 0; c < nc; ++c) {
        const double g = probs[c] / sum - (c == y[i] ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t a = 0; a < dim; ++a) gw[a * nc + c] += xi[a] * g;
      }
    }
    for (std::size_t j = 0; j < gw.size(); ++j) {
      fit.weights[j] -= cfg.learning_rate * (gw[j] * inv_n + cfg.l2 * fit.weights[j]);
    }
    for (std::size_t c = 0; c < nc; ++c) fit.bias[c] -= cfg.learning_rate * gb[c] * inv_n;
  }
  return fit;
}

std::vector<double> probe_probabilities(const ProbeFit& fit, std::span<const double> rows, std::size_t dim) {
  const std::size_t nc = fit.classes.size();
  const std::size_t n = rows.size() / dim;
  std::vector<double> out(n * nc);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < nc; ++c) {
      double z = fit.bias[c];
      for (std::size_t a = 0; a < dim; ++a) z += (rows[i * dim + a] - fit.mean[a]) * fit.weights[a * nc + c];
      out[i * nc + c] = z;
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      out[i * nc + c] = std::exp(out[i * nc + c] - mx);
      sum += out[i * nc + c];
    }
    for (std::size_t c = 0; c < nc; ++c) out[i * nc + c] /= sum;
  }
  return out;
}

TaskResult run_classification(const ClassificationData& ds, const EncoderHandle& enc, const ProbeConfig& cfg) {
  if (ds.train.empty() || ds.test.empty()) throw ValidationError("classification: empty split");
  std::vector<std::string> train_texts;
  std::vector<std::string> train_labels;
  for (const auto& t : ds.train) {
    train_texts.push_back(t.text);
    train_labels.push_back(t.label);
  }
  std::vector<std::string> test_texts;
  std::vector<std::string> test_labels;
  for (const auto& t : ds.test) {
    test_texts.push_back(t.text);
    test_labels.push_back(t.label);
  }
  if (std::set<std::string>(train_labels.begin(), train_labels.end()).size() < 2) {
    throw ValidationError("classification: training split has a single class");
  }
  const EmbeddingMatrix etr = encode_normalized(enc, train_texts, Side::Passage);
  const EmbeddingMatrix ete = encode_normalized(enc, test_texts, Side::Passage);
  const std::size_t dim = etr.dim();
  const ProbeFit fit = fit_probe(to_double_rows(etr), dim, train_labels, cfg);
  const auto probs = probe_probabilities(fit, to_double_rows(ete), dim);
  const std::size_t nc = fit.classes.size();

  std::vector<std::string> predicted;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < nc; ++c) {
      if (probs[i * nc + c] > probs[i * nc + best]) best = c;
    }
    predicted.push_back(fit.classes[best]);
  }

  // Auxiliary: macro one-vs-rest AP over classes present in the test split.
  double ap_sum = 0.0;
  std::size_t ap_n = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<metrics::RankedItem> items;
    bool any = false;
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
      const int rel = test_labels[i] == fit.classes[c] ? 1 : 0;
      any = any || rel == 1;
      items.push_back({index_id(i), probs[i * nc + c], rel});
    }
    if (!any) continue;
    ap_sum += metrics::average_precision(metrics::RankedList(std::move(items)).relevances());
    ++ap_n;
  }

  TaskResult out;
  out.metric = "accuracy";
  out.score = metrics::accuracy(std::span<const std::string>(test_labels), std::span<const std::string>(predicted));
  out.extras = OrderedJson{{"macro_ap", ap_n == 0 ? OrderedJson(nullptr) : OrderedJson(ap_sum / static_cast<double>(ap_n))},
                           {"classes", nc},
                           {"train", ds.train.size()},
                           {"test", ds.test.size()}};
  return out;
}

TaskResult run_pair_classification(const PairClassificationData& ds, const EncoderHandle& enc) {
  bool has_pos = false;
  bool has_neg = false;
  for (const auto& p : ds.pairs) {
    has_pos = has_pos || p.label == 1;
    has_neg = has_neg || p.label == 0;
  }
  if (!has_pos || !has_neg) throw MetricError("pair classification: both labels must be present");
  std::vector<std::string> a;
  std::vector<std::string> b;
  for (const auto& p : ds.pairs) {
    a.push_back(p.s1);
    b.push_back(p.s2);
  }
  const EmbeddingMatrix ea = encode_normalized(enc, a, Side::Passage);
  const EmbeddingMatrix eb = encode_normalized(enc, b, Side::Passage);
  std::vector<metrics::RankedItem> items;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    items.push_back({index_id(i), dot(ea.row(i), eb.row(i)), ds.pairs[i].label});
  }
  TaskResult out;
  out.metric = "ap";
  out.score = metrics::average_precision(metrics::RankedList(std::move(items)).relevances());
  out.extras = OrderedJson{{"pairs", ds.pairs.size()}};
  return out;
}

std::vector<int> mini_batch_kmeans(std::span<const double> points, std::size_t dim, std::size_t k,
                                   const KMeansConfig& cfg, std::uint64_t seed) {
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  if (k == 0) throw ValidationError("k-means: k must be >= 1");
  if (n < k) {
    throw ValidationError("k-means: " + std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");
  }
  Rng rng(seed);
  std::vector<double> centers(k * dim);
  auto set_center = [&](std::size_t c, std::size_t p) {
    std::copy_n(points.data() + p * dim, dim, centers.data() + c * dim);
  };

  // k-means++ seeding.
  set_center(0, static_cast<std::size_t>(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.data() + i * dim, centers.data(), dim);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.below(n));
    } else {
      double r = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    }
    set_center(c, pick);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.data() + i * dim, centers.data() + c * dim, dim));
    }
  }

  // Mini-batch updates with per-center learning rate 1/count.
  const std::size_t batch = std::min(cfg.batch_size, n);
  std::vector<std::size_t> counts(k, 0);
  std::vector<std::size_t> pool(n);
  std::vector<std::size_t> assigned(batch);
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pool[i], pool[j]);
    }
    for (std::size_t i = 0; i < batch; ++i) assigned[i] = nearest(points.data() + pool[i] * dim, centers, k, dim);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t c = assigned[i];
      ++counts[c];
      const double eta = 1.0 / static_cast<double>(counts[c]);
      const double* x = points.data() + pool[i] * dim;
      double* ctr = centers.data() + c * dim;
      for (std::size_t a = 0; a < dim; ++a) ctr[a] = (1.0 - eta) * ctr[a] + eta * x[a];
    }
  }

  std::vector<int> labels(n);
  std::vector<double> dist(n);
  auto assign_all = [&] {
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest(points.data() + i * dim, centers, k, dim, &dist[i]);
      labels[i] = static_cast<int>(c);
      ++sizes[c];
    }
    return sizes;
  };
  auto sizes = assign_all();
  for (std::size_t round = 0; round < k; ++round) {
    const auto empty = std::find(sizes.begin(), sizes.end(), 0U);
    if (empty == sizes.end()) break;
    std::size_t far = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (sizes[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (far == n || dist[i] > dist[far]) far = i;
    }
    if (far == n) break;
    set_center(static_cast<std::size_t>(empty - sizes.begin()), far);
    sizes = assign_all();
  }
  return labels;
}

TaskResult run_clustering(const ClusteringData& ds, const EncoderHandle& enc, const KMeansConfig& cfg,
                          std::uint64_t seed) {
  if (ds.items.empty()) throw ValidationError("clustering: empty dataset");
  std::vector<std::string> texts;
  std::vector<std::string> labels;
  for (const auto& it : ds.items) {
    texts.push_back(it.text);
    labels.push_back(it.label);
  }
  const std::size_t k = std::set<std::string>(labels.begin(), labels.end()).size();
  const EmbeddingMatrix e = encode_normalized(enc, texts, Side::Passage);
  const auto pred = mini_batch_kmeans(to_double_rows(e), e.dim(), k, cfg, seed);
  const auto truth = metrics::encode_labels(labels);
  const auto s = metrics::clustering_scores(truth, pred);
  TaskResult out;
  out.metric = "v_measure";
  out.score = s.v_measure;
  out.extras = OrderedJson{{"k", k}, {"homogeneity", s.homogeneity}, {"completeness", s.completeness}};
  return out;
}

void TaskList::add(TaskDataset dataset, std::string task_tag) {
  for (const auto& e : entries_) {
    if (e.dataset.name == dataset.name) throw ValidationError("task list already has a dataset named " + dataset.name);
  }
  if (task_tag.empty()) task_tag = std::string(task_kind_slug(dataset.kind));
  entries_.push_back({std::move(dataset), std::move(task_tag)});
}

TaskList discover_tasks(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("task directory not found: " + dir.string());
  std::map<std::string, Json> tags;
  if (const fs::path tj = dir / "tasks.json"; fs::exists(tj)) {
    const Json j = Json::parse(read_file(tj));
    for (const auto& [name, tag] : j.items()) tags[name] = tag;
  }
  // name -> (kind, one representative path)
  std::map<std::string, std::pair<TaskKind, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    if (!entry.is_regular_file() || !file.ends_with(".jsonl")) continue;
    std::string stem = file.substr(0, file.size() - 6);
    for (const char* part : {".corpus", ".queries", ".qrels", ".train", ".test"}) {
      if (stem.ends_with(part)) {
        stem.resize(stem.size() - std::string_view(part).size());
        break;
      }
    }
    const auto dot_pos = stem.rfind('.');
    if (dot_pos == std::string::npos) continue;
    const auto kind = parse_task_kind(stem.substr(dot_pos + 1));
    if (!kind) continue;
    const std::string name = stem.substr(0, dot_pos);
    auto [it, inserted] = found.emplace(name, std::make_pair(*kind, entry.path()));
    if (!inserted && it->second.first != *kind) {
      throw ValidationError("dataset name " + name + " is used by two task kinds");
    }
  }
  TaskList list;
  for (const auto& [name, kp] : found) {
    std::string tag;
    if (auto it = tags.find(name); it != tags.end() && it->second.is_string()) tag = it->second.get<std::string>();
    list.add(load_task_dataset(kp.second, kp.first), tag);
  }
  return list;
}

TaskResult run_task(const TaskEntry& entry, const EncoderHandle& base, const EvalConfig& cfg) {
  std::string instruction;
  if (auto it = cfg.instructions.find(entry.task_tag); it != cfg.instructions.end()) instruction = it->second;
  const InstructedEncoder enc(base, instruction);
  return std::visit(
      [&](const auto& p) -> TaskResult {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RetrievalData>) return run_retrieval(p, enc, cfg.k);
        if constexpr (std::is_same_v<T, RerankingData>) return run_reranking(p, enc);
        if constexpr (std::is_same_v<T, StsData>) return run_sts(p, enc);
        if constexpr (std::is_same_v<T, ClassificationData>) return run_classification(p, enc, cfg.probe);
        if constexpr (std::is_same_v<T, PairClassificationData>) return run_pair_classification(p, enc);
        if constexpr (std::is_same_v<T, ClusteringData>) return run_clustering(p, enc, cfg.kmeans, cfg.seed);
      },
      entry.dataset.payload);
}

EvaluationReport run_suite(const TaskList& tasks, const EncoderHandle& enc, const EvalConfig& cfg,
                           const fs::path& out_dir) {
  const auto& entries = tasks.entries();
  std::vector<DatasetScore> rows(entries.size());
  std::vector<OrderedJson> files(entries.size());

  auto run_one = [&](std::size_t i) {
    const auto& e = entries[i];
    DatasetScore& row = rows[i];
    row.dataset = e.dataset.name;
    row.kind = e.dataset.kind;
    OrderedJson file{{"dataset", row.dataset}, {"kind", std::string(task_kind_name(row.kind))}};
    try {
      const TaskResult r = run_task(e, enc, cfg);
      row.metric = r.metric;
      row.score = r.score;
      file["metric"] = r.metric;
      file["score"] = r.score;
      file["extras"] = r.extras;
      file["status"] = "ok";
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
      file["metric"] = nullptr;
      file["score"] = nullptr;
      file["extras"] = OrderedJson{{"error", row.error}};
      file["status"] = "failed";
    }
    file["seed"] = cfg.seed;
    files[i] = std::move(file);
  };

  const unsigned jobs = std::max(1U, std::min<unsigned>(cfg.jobs, static_cast<unsigned>(entries.size())));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < entries.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < entries.size(); i = next++) run_one(i);
      });
    }
    for (auto& t : workers) t.join();
  }

  EvaluationReport report;
  report.per_dataset = std::move(rows);
  compute_averages(report);

  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    write_file(out_dir / (entries[i].dataset.name + ".json"), files[i].dump(2) + "\n");
  }
  OrderedJson summary = to_json(report);
  summary["seed"] = cfg.seed;
  write_file(out_dir / "report.json", summary.dump(2) + "\n");
  return report;
}

}  // namespace embkit::eval
