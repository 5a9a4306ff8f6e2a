#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "embkit/datamodel.hpp"
#include "embkit/encoder_handle.hpp"

// Training-pair curation: extraction from structured documents, general
// filtering (length, non-textual, blocklist, exact duplicates) and semantic
// filtering against a pluggable relatedness scorer.
namespace embkit::curation {

struct Section {
  std::optional<std::string> subtitle;
  std::string passage;
};

struct QaItem {
  std::string question;
  std::string answer;
};

struct StructuredDoc {
  std::optional<std::string> title;
  std::vector<Section> sections;
  std::vector<QaItem> qa_items;
  std::string source;
};

// Throws ValidationError when the document has no title, sections or QA items.
void validate(const StructuredDoc& doc);
StructuredDoc structured_doc_from_json(const Json& j);

// Emission order: (title, body) if titled, then (subtitle, passage) per
// titled section, then (question, answer) per QA item.
std::vector<TextPair> extract_pairs(const StructuredDoc& doc);

// Pair relatedness in [0, 1]. Implementations may throw to signal failure on a
// single pair; the filter counts it and moves on.
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual double score(const TextPair& pair) const = 0;
};

// Jaccard similarity of character-bigram sets (code points). A single-char
// side contributes its lone character as its only "bigram"; an empty side scores 0.
double builtin_overlap_score(const TextPair& pair);

class OverlapScorer final : public PairScorer {
 public:
  double score(const TextPair& pair) const override { return builtin_overlap_score(pair); }
};

// Cosine of query/passage embeddings, clamped to [0, 1].
class EncoderScorer final : public PairScorer {
 public:
  explicit EncoderScorer(const EncoderHandle& enc) : enc_(enc) {}
  double score(const TextPair& pair) const override;

 private:
  const EncoderHandle& enc_;
};

class FunctionScorer final : public PairScorer {
 public:
  explicit FunctionScorer(std::function<double(const TextPair&)> fn) : fn_(std::move(fn)) {}
  double score(const TextPair& pair) const override { return fn_(pair); }

 private:
  std::function<double(const TextPair&)> fn_;
};

struct FilterConfig {
  std::size_t min_chars = 4;
  std::size_t max_chars = 8192;
  double min_informative_ratio = 0.5;
  bool dedup = true;
  double semantic_threshold = 0.43;
  // Pairs whose normalized text contains any of these terms are dropped.
  std::vector<std::string> blocklist;
  std::shared_ptr<const PairScorer> scorer = std::make_shared<OverlapScorer>();
  unsigned jobs = 1;
};

// Throws ValidationError on inconsistent bounds or a threshold outside [0,1].
void validate(const FilterConfig& cfg);

inline constexpr const char* kDropReasons[] = {"length", "non_textual", "blocked",
                                               "duplicate", "below_threshold", "scorer_error"};

struct FilterStats {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::map<std::string, std::size_t> drops;

  FilterStats();
  std::size_t total_dropped() const;
  FilterStats& operator+=(const FilterStats& other);
};

// Informative code points (letters, digits, CJK) over non-space code points.
double informative_ratio(const std::string& s);

// Dedup key: normalized query, U+001F, normalized passage.
std::string dedup_key(const TextPair& pair);

// Streaming general filter; keeps the seen-set across calls.
class GeneralFilter {
 public:
  explicit GeneralFilter(FilterConfig cfg);
  // Returns the drop reason, or nullopt when the pair is kept.
  std::optional<std::string> check(const TextPair& pair);
  bool accept(const TextPair& pair);
  const FilterStats& stats() const { return stats_; }

 private:
  FilterConfig cfg_;
  std::vector<std::string> blocked_norm_;
  std::unordered_set<std::string> seen_;
  FilterStats stats_;
};

struct FilterResult {
  std::vector<TextPair> pairs;
  FilterStats stats;
};

FilterResult general_filter(std::span<const TextPair> pairs, const FilterConfig& cfg);

// Keeps pairs scoring >= threshold; kept pairs carry their score.
FilterResult semantic_filter(std::span<const TextPair> pairs, const FilterConfig& cfg);

struct CurationReport {
  std::size_t raw = 0;
  std::size_t after_general = 0;
  std::size_t after_semantic = 0;
  std::map<std::string, std::size_t> drops;

  OrderedJson to_json() const;
};

// extract -> general filter -> semantic filter, streamed in chunks. Input
// records are StructuredDoc objects; TextPair records pass through extraction
// unchanged, so the pipeline can be re-run on its own output. All inputs are
// checked for readability before anything is written.
CurationReport run_pipeline(std::span<const std::filesystem::path> inputs, const FilterConfig& cfg,
                            const std::filesystem::path& out_path);

}  // namespace embkit::curation
