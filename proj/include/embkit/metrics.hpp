#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

// Main metrics of the six benchmark task groups. All functions are pure.
namespace embkit::metrics {

struct RankedItem {
  std::string doc_id;
  double score = 0.0;
  int relevance = 0;
};

// Items ordered by descending score, ties broken by ascending doc id.
class RankedList {
 public:
  RankedList() = default;
  explicit RankedList(std::vector<RankedItem> items);

  const std::vector<RankedItem>& items() const { return items_; }
  std::vector<int> relevances() const;
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<RankedItem> items_;
};

// Linear-gain NDCG: DCG@k = sum rel_i / log2(i+1); IDCG from `ideal_rels`
// sorted descending. Returns 0 when IDCG is 0. k must be >= 1.
double ndcg_at_k(const RankedList& ranked, std::span<const int> ideal_rels, std::size_t k);
double ndcg_at_k(std::span<const int> ranked_rels, std::span<const int> ideal_rels, std::size_t k);

// Mean of precision@i over positive positions. Throws MetricError without positives.
double average_precision(std::span<const int> ranked_labels);

// Mean AP over queries; queries without a positive or without a negative are
// skipped. Throws MetricError if nothing remains.
double mean_average_precision(const std::vector<std::vector<int>>& per_query);

// Fractional (average-for-ties) ranks, 1-based.
std::vector<double> fractional_ranks(std::span<const double> values);

// Pearson correlation of fractional ranks. Throws MetricError on length
// mismatch, fewer than two points, or constant input.
double spearman(std::span<const double> x, std::span<const double> y);

double pearson(std::span<const double> x, std::span<const double> y);

struct ClusteringScores {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double v_measure = 0.0;
};

// Entropies in nats from the contingency table. h = 1 when H(C) = 0,
// c = 1 when H(K) = 0, V = 0 when h + c = 0.
ClusteringScores clustering_scores(std::span<const int> labels_true, std::span<const int> labels_pred);
double v_measure(std::span<const int> labels_true, std::span<const int> labels_pred);
double v_measure(std::span<const std::string> labels_true, std::span<const std::string> labels_pred);

double accuracy(std::span<const int> labels_true, std::span<const int> labels_pred);
double accuracy(std::span<const std::string> labels_true, std::span<const std::string> labels_pred);

// Maps labels to dense ids in order of first appearance.
std::vector<int> encode_labels(std::span<const std::string> labels);

}  // namespace embkit::metrics
