#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "embkit/datamodel.hpp"
#include "embkit/encoder_handle.hpp"

// Runs the six task protocols against an encoder and aggregates a report.
namespace embkit::eval {

// Softmax-regression probe fitted by full-batch gradient descent from zero
// weights on mean-centered, L2-normalized features.
struct ProbeConfig {
  int max_iters = 100;
  double learning_rate = 1.0;
  double l2 = 1e-4;
};

struct KMeansConfig {
  std::size_t batch_size = 32;
  int steps = 100;
};

struct EvalConfig {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  ProbeConfig probe;
  KMeansConfig kmeans;
  // task tag -> instruction prefixed to query-side texts
  std::map<std::string, std::string> instructions;
  unsigned jobs = 1;
};

struct TaskResult {
  std::string metric;
  double score = 0.0;
  OrderedJson extras = OrderedJson::object();
};

TaskResult run_retrieval(const RetrievalData& ds, const EncoderHandle& enc, std::size_t k = 10);
TaskResult run_reranking(const RerankingData& ds, const EncoderHandle& enc);
TaskResult run_sts(const StsData& ds, const EncoderHandle& enc);
TaskResult run_classification(const ClassificationData& ds, const EncoderHandle& enc, const ProbeConfig& cfg = {});
TaskResult run_pair_classification(const PairClassificationData& ds, const EncoderHandle& enc);
TaskResult run_clustering(const ClusteringData& ds, const EncoderHandle& enc, const KMeansConfig& cfg = {},
                          std::uint64_t seed = 0);

// Logistic-regression probe, exposed for direct testing. Rows of `train` and
// `test` are feature vectors of width `dim`.
struct ProbeFit {
  std::vector<std::string> classes;  // sorted
  std::vector<double> weights;       // dim x classes
  std::vector<double> bias;          // classes
  std::vector<double> mean;          // dim
};
ProbeFit fit_probe(std::span<const double> train, std::size_t dim, std::span<const std::string> labels,
                   const ProbeConfig& cfg);
// Row-wise class probabilities, rows x classes.
std::vector<double> probe_probabilities(const ProbeFit& fit, std::span<const double> rows, std::size_t dim);

// Mini-batch k-means: k-means++ seeding on the full set, per-center 1/count
// learning rate, empty clusters reseeded to the farthest point. Returns one
// cluster id per point.
std::vector<int> mini_batch_kmeans(std::span<const double> points, std::size_t dim, std::size_t k,
                                   const KMeansConfig& cfg, std::uint64_t seed);

// Prefixes instructions to query-side texts before delegating.
class InstructedEncoder final : public EncoderHandle {
 public:
  InstructedEncoder(const EncoderHandle& inner, std::string instruction)
      : inner_(inner), instruction_(std::move(instruction)) {}
  EmbeddingMatrix encode(std::span<const std::string> texts, Side side) const override;
  std::size_t dim() const override { return inner_.dim(); }

 private:
  const EncoderHandle& inner_;
  std::string instruction_;
};

struct TaskEntry {
  TaskDataset dataset;
  std::string task_tag;  // selects an instruction; defaults to the kind slug
};

class TaskList {
 public:
  void add(TaskDataset dataset, std::string task_tag = {});
  const std::vector<TaskEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<TaskEntry> entries_;
};

// Finds every <name>.<kind>[.<part>].jsonl under `dir` (sorted by name). An
// optional tasks.json maps dataset name -> task tag.
TaskList discover_tasks(const std::filesystem::path& dir);

TaskResult run_task(const TaskEntry& entry, const EncoderHandle& enc, const EvalConfig& cfg);

// Runs every task, writes <out_dir>/<dataset>.json per dataset and
// <out_dir>/report.json. Task failures are recorded, not thrown.
EvaluationReport run_suite(const TaskList& tasks, const EncoderHandle& enc, const EvalConfig& cfg,
                           const std::filesystem::path& out_dir);

}  // namespace embkit::eval
