#include "embkit/curation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include "embkit/error.hpp"
#include "embkit/text.hpp"

namespace embkit::curation {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChunk = 1024;

bool blank(const std::string& s) { return text::trim(s).empty(); }

std::optional<std::string> optional_string(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

std::string required_string(const Json& j, const char* key) {
  auto v = optional_string(j, key);
  if (!v) throw ParseError(std::string("missing field \"") + key + "\"");
  return *v;
}

std::set<std::u32string> bigrams(const std::string& s) {
  const auto cps = text::code_points(s);
  std::set<std::u32string> out;
  if (cps.size() == 1) {
    out.insert(std::u32string(1, cps[0]));
    return out;
  }
  for (std::size_t i = 0; i + 1 < cps.size(); ++i) out.insert(std::u32string{cps[i], cps[i + 1]});
  return out;
}

bool is_text_pair_record(const Json& j) { return j.is_object() && j.contains("query") && j.contains("passage"); }

}  // namespace

void validate(const StructuredDoc& doc) {
  const bool has_title = doc.title && !blank(*doc.title);
  if (!has_title && doc.sections.empty() && doc.qa_items.empty()) {
    throw ValidationError("structured document has no title, sections or QA items");
  }
}

StructuredDoc structured_doc_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("structured document is not a JSON object");
  StructuredDoc doc;
  doc.title = optional_string(j, "title");
  doc.source = optional_string(j, "source").value_or("");
  if (auto it = j.find("sections"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("field \"sections\" must be an array");
    for (const auto& s : *it) doc.sections.push_back({optional_string(s, "subtitle"), required_string(s, "passage")});
  }
  if (auto it = j.find("qa"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("field \"qa\" must be an array");
    for (const auto& q : *it) doc.qa_items.push_back({required_string(q, "q"), required_string(q, "a")});
  }
  validate(doc);
  return doc;
}

std::vector<TextPair> extract_pairs(const StructuredDoc& doc) {
  std::vector<TextPair> out;
  auto emit = [&](const std::string& q, const std::string& p, const char* tag) {
    if (!blank(q) && !blank(p)) out.push_back({q, p, tag, std::nullopt});
  };
  if (doc.title && !doc.sections.empty()) {
    std::string body;
    for (const auto& s : doc.sections) {
      if (blank(s.passage)) continue;
      if (!body.empty()) body.push_back('\n');
      body += s.passage;
    }
    emit(*doc.title, body, "title-body");
  }
  for (const auto& s : doc.sections) {
    if (s.subtitle) emit(*s.subtitle, s.passage, "subtitle-passage");
  }
  for (const auto& qa : doc.qa_items) emit(qa.question, qa.answer, "qa");
  return out;
}

double builtin_overlap_score(const TextPair& pair) {
  if (pair.query.empty() || pair.passage.empty()) return 0.0;
  const auto a = bigrams(pair.query);
  const auto b = bigrams(pair.passage);
  std::size_t inter = 0;
  for (const auto& g : a) inter += b.contains(g) ? 1 : 0;
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double EncoderScorer::score(const TextPair& pair) const {
  const std::vector<std::string> q{pair.query};
  const std::vector<std::string> p{pair.passage};
  const EmbeddingMatrix eq = normalize_rows(enc_.encode(q, Side::Query));
  const EmbeddingMatrix ep = normalize_rows(enc_.encode(p, Side::Passage));
  double cos = 0.0;
  for (std::size_t i = 0; i < eq.dim(); ++i) cos += static_cast<double>(eq.row(0)[i]) * ep.row(0)[i];
  return std::clamp(cos, 0.0, 1.0);
}

void validate(const FilterConfig& cfg) {
  if (cfg.min_chars > cfg.max_chars) throw ValidationError("min_chars must not exceed max_chars");
  if (!(cfg.semantic_threshold >= 0.0 && cfg.semantic_threshold <= 1.0)) {
    throw ValidationError("semantic threshold must lie in [0,1]");
  }
  if (!(cfg.min_informative_ratio >= 0.0 && cfg.min_informative_ratio <= 1.0)) {
    throw ValidationError("min_informative_ratio must lie in [0,1]");
  }
  if (!cfg.scorer) throw ValidationError("no pair scorer configured");
}

FilterStats::FilterStats() {
  for (const char* r : kDropReasons) drops[r] = 0;
}

std::size_t FilterStats::total_dropped() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : drops) n += count;
  return n;
}

FilterStats& FilterStats::operator+=(const FilterStats& other) {
  input += other.input;
  kept += other.kept;
  for (const auto& [reason, count] : other.drops) drops[reason] += count;
  return *this;
}

double informative_ratio(const std::string& s) {
  std::size_t total = 0;
  std::size_t informative = 0;
  for (char32_t cp : text::code_points(s)) {
    if (text::is_whitespace(cp)) continue;
    ++total;
    informative += text::is_informative(cp) ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(informative) / static_cast<double>(total);
}

std::string dedup_key(const TextPair& pair) {
  return text::normalize_for_match(pair.query) + '\x1F' + text::normalize_for_match(pair.passage);
}

GeneralFilter::GeneralFilter(FilterConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  for (const auto& term : cfg_.blocklist) {
    auto norm = text::normalize_for_match(term);
    if (!norm.empty()) blocked_norm_.push_back(std::move(norm));
  }
}

std::optional<std::string> GeneralFilter::check(const TextPair& pair) {
  for (const std::string* side : {&pair.query, &pair.passage}) {
    const std::size_t n = text::code_points(*side).size();
    if (n < cfg_.min_chars || n > cfg_.max_chars) return "length";
  }
  for (const std::string* side : {&pair.query, &pair.passage}) {
    if (informative_ratio(*side) < cfg_.min_informative_ratio) return "non_textual";
  }
  if (!blocked_norm_.empty()) {
    const std::string q = text::normalize_for_match(pair.query);
    const std::string p = text::normalize_for_match(pair.passage);
    for (const auto& term : blocked_norm_) {
      if (q.find(term) != std::string::npos || p.find(term) != std::string::npos) return "blocked";
    }
  }
  if (cfg_.dedup && !seen_.insert(dedup_key(pair)).second) return "duplicate";
  return std::nullopt;
}

bool GeneralFilter::accept(const TextPair& pair) {
  ++stats_.input;
  if (auto reason = check(pair)) {
    ++stats_.drops[*reason];
    return false;
  }
  ++stats_.kept;
  return true;
}

FilterResult general_filter(std::span<const TextPair> pairs, const FilterConfig& cfg) {
  GeneralFilter f(cfg);
  FilterResult out;
  for (const auto& p : pairs) {
    if (f.accept(p)) out.pairs.push_back(p);
  }
  out.stats = f.stats();
  return out;
}

FilterResult semantic_filter(std::span<const TextPair> pairs, const FilterConfig& cfg) {
  validate(cfg);
  const PairScorer& scorer = *cfg.scorer;
  // NaN marks a scorer failure.
  std::vector<double> scores(pairs.size());
  auto score_one = [&](std::size_t i) {
    try {
      const double s = scorer.score(pairs[i]);
      scores[i] = (std::isfinite(s) && s >= 0.0 && s <= 1.0) ? s : std::nan("");
    } catch (const std::exception&) {
      scores[i] = std::nan("");
    }
  };
  const unsigned jobs = std::max(1U, std::min<unsigned>(cfg.jobs, static_cast<unsigned>(pairs.size())));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) score_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < pairs.size(); i = next++) score_one(i);
      });
    }
    for (auto& t : workers) t.join();
  }

  FilterResult out;
  out.stats.input = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (std::isnan(scores[i])) {
      ++out.stats.drops["scorer_error"];
    } else if (scores[i] < cfg.semantic_threshold) {
      ++out.stats.drops["below_threshold"];
    } else {
      TextPair kept = pairs[i];
      kept.score = scores[i];
      out.pairs.push_back(std::move(kept));
    }
  }
  out.stats.kept = out.pairs.size();
  return out;
}

OrderedJson CurationReport::to_json() const {
  OrderedJson d = OrderedJson::object();
  for (const char* r : kDropReasons) {
    auto it = drops.find(r);
    d[r] = it == drops.end() ? 0 : it->second;
  }
  return OrderedJson{{"raw", raw}, {"after_general", after_general}, {"after_semantic", after_semantic}, {"drops", d}};
}

CurationReport run_pipeline(std::span<const fs::path> inputs, const FilterConfig& cfg, const fs::path& out_path) {
  validate(cfg);
  for (const auto& in : inputs) {
    std::ifstream probe(in);
    if (!probe) throw Error("cannot read curation input " + in.string());
  }

  GeneralFilter general(cfg);
  FilterStats semantic_stats;
  CurationReport report;
  JsonlWriter writer(out_path);
  std::vector<TextPair> chunk;

  auto flush = [&] {
    FilterResult r = semantic_filter(chunk, cfg);
    semantic_stats += r.stats;
    for (const auto& p : r.pairs) writer.write(to_json(p));
    chunk.clear();
  };
  auto feed = [&](TextPair p) {
    ++report.raw;
    if (!general.accept(p)) return;
    chunk.push_back(std::move(p));
    if (chunk.size() >= kChunk) flush();
  };

  for (const auto& in : inputs) {
    for_each_jsonl(in, [&](const Json& j, std::size_t) {
      if (is_text_pair_record(j)) {
        TextPair p = text_pair_from_json(j);
        p.score.reset();
        feed(std::move(p));
        return;
      }
      for (auto& p : extract_pairs(structured_doc_from_json(j))) feed(std::move(p));
    });
  }
  if (!chunk.empty()) flush();
  writer.close();

  report.after_general = general.stats().kept;
  report.after_semantic = semantic_stats.kept;
  FilterStats all = general.stats();
  all.drops["below_threshold"] += semantic_stats.drops["below_threshold"];
  all.drops["scorer_error"] += semantic_stats.drops["scorer_error"];
  report.drops = all.drops;
  return report;
}

}  // namespace embkit::curation
