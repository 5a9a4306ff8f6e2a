#include "embkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "embkit/error.hpp"

namespace embkit::metrics {
namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw MetricError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

}  // namespace

RankedList::RankedList(std::vector<RankedItem> items) : items_(std::move(items)) {
  std::sort(items_.begin(), items_.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
}

std::vector<int> RankedList::relevances() const {
  std::vector<int> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.relevance);
  return out;
}

double ndcg_at_k(const RankedList& ranked, std::span<const int> ideal_rels, std::size_t k) {
  const auto rels = ranked.relevances();
  return ndcg_at_k(rels, ideal_rels, k);
}

double ndcg_at_k(std::span<const int> ranked_rels, std::span<const int> ideal_rels, std::size_t k) {
  if (k == 0) throw MetricError("ndcg: k must be >= 1");
  auto dcg = [k](std::span<const int> rels) {
    double sum = 0.0;
    const std::size_t n = std::min(k, rels.size());
    for (std::size_t i = 0; i < n; ++i) sum += static_cast<double>(rels[i]) / std::log2(static_cast<double>(i) + 2.0);
    return sum;
  };
  std::vector<int> ideal(ideal_rels.begin(), ideal_rels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  if (idcg <= 0.0) return 0.0;
  return dcg(ranked_rels) / idcg;
}

double average_precision(std::span<const int> ranked_labels) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked_labels.size(); ++i) {
    if (ranked_labels[i] > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  if (hits == 0) throw MetricError("average precision undefined: no positive labels");
  return sum / static_cast<double>(hits);
}

double mean_average_precision(const std::vector<std::vector<int>>& per_query) {
  if (per_query.empty()) throw MetricError("MAP undefined: no queries");
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& labels : per_query) {
    const auto pos = std::count_if(labels.begin(), labels.end(), [](int l) { return l > 0; });
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) continue;
    sum += average_precision(labels);
    ++used;
  }
  if (used == 0) throw MetricError("MAP undefined: every query lacks positives or negatives");
  return sum / static_cast<double>(used);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share the mean 1-based rank
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "pearson");
  const std::size_t n = x.size();
  if (n < 2) throw MetricError("pearson: need at least two points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("correlation undefined: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "spearman");
  if (x.size() < 2) throw MetricError("spearman: need at least two points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
  };
  if (constant(x) || constant(y)) throw MetricError("spearman undefined: constant input");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

ClusteringScores clustering_scores(std::span<const int> labels_true, std::span<const int> labels_pred) {
  require_same_length(labels_true.size(), labels_pred.size(), "v_measure");
  if (labels_true.empty()) throw MetricError("v_measure: empty input");
  const double n = static_cast<double>(labels_true.size());

  std::map<int, std::size_t> class_index;
  std::map<int, std::size_t> cluster_index;
  for (int c : labels_true) class_index.emplace(c, class_index.size());
  for (int k : labels_pred) cluster_index.emplace(k, cluster_index.size());
  const std::size_t nc = class_index.size();
  const std::size_t nk = cluster_index.size();

  std::vector<double> table(nc * nk, 0.0);
  std::vector<double> class_counts(nc, 0.0);
  std::vector<double> cluster_counts(nk, 0.0);
  for (std::size_t i = 0; i < labels_true.size(); ++i) {
    const std::size_t c = class_index[labels_true[i]];
    const std::size_t k = cluster_index[labels_pred[i]];
    table[c * nk + k] += 1.0;
    class_counts[c] += 1.0;
    cluster_counts[k] += 1.0;
  }

  const double h_c = entropy(class_counts, n);
  const double h_k = entropy(cluster_counts, n);
  // H(C|K) = -sum_{c,k} n_ck/n log(n_ck/n_k); H(K|C) symmetric.
  double h_c_given_k = 0.0;
  double h_k_given_c = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t k = 0; k < nk; ++k) {
      const double nck = table[c * nk + k];
      if (nck == 0.0) continue;
      h_c_given_k -= (nck / n) * std::log(nck / cluster_counts[k]);
      h_k_given_c -= (nck / n) * std::log(nck / class_counts[c]);
    }
  }

  ClusteringScores s;
  s.homogeneity = h_c == 0.0 ? 1.0 : 1.0 - h_c_given_k / h_c;
  s.completeness = h_k == 0.0 ? 1.0 : 1.0 - h_k_given_c / h_k;
  const double denom = s.homogeneity + s.completeness;
  s.v_measure = denom == 0.0 ? 0.0 : 2.0 * s.homogeneity * s.completeness / denom;
  return s;
}

double v_measure(std::span<const int> labels_true, std::span<const int> labels_pred) {
  return clustering_scores(labels_true, labels_pred).v_measure;
}

double v_measure(std::span<const std::string> labels_true, std::span<const std::string> labels_pred) {
  const auto t = encode_labels(labels_true);
  const auto p = encode_labels(labels_pred);
  return v_measure(t, p);
}

double accuracy(std::span<const int> labels_true, std::span<const int> labels_pred) {
  require_same_length(labels_true.size(), labels_pred.size(), "accuracy");
  if (labels_true.empty()) throw MetricError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels_true.size(); ++i) hits += labels_true[i] == labels_pred[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels_true.size());
}

double accuracy(std::span<const std::string> labels_true, std::span<const std::string> labels_pred) {
  require_same_length(labels_true.size(), labels_pred.size(), "accuracy");
  if (labels_true.empty()) throw MetricError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels_true.size(); ++i) hits += labels_true[i] == labels_pred[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels_true.size());
}

std::vector<int> encode_labels(std::span<const std::string> labels) {
  std::unordered_map<std::string, int> ids;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto [it, inserted] = ids.emplace(l, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace embkit::metrics
