#include "embkit/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "embkit/error.hpp"
#include "embkit/rng.hpp"

namespace embkit::synth {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kTopicDocWords = 12;
constexpr std::size_t kTopicQueryWords = 12;
constexpr std::size_t kFillerWords = 40;
constexpr std::size_t kStyleWords = 8;

constexpr const char* kRetrievalInstruction = "search relevant passages for the query";
constexpr const char* kQaInstruction = "find the answer to the question";

struct Vocab {
  std::vector<std::vector<std::string>> doc;    // per topic
  std::vector<std::vector<std::string>> query;  // per topic
  std::vector<std::string> filler;
  std::vector<std::string> passage_style;
  std::vector<std::string> answer_style;
};

enum class Style { Passage, Answer };

class Generator {
 public:
  explicit Generator(const SynthConfig& cfg) : cfg_(cfg), rng_(cfg.seed) { build_vocab(); }

  const Vocab& vocab() const { return vocab_; }
  Rng& rng() { return rng_; }

  std::string doc(std::size_t topic, Style style) {
    std::vector<std::string> w;
    pick(vocab_.doc[topic], 6, w);
    pick(style == Style::Passage ? vocab_.passage_style : vocab_.answer_style, 2, w);
    pick(vocab_.filler, 2, w);
    return join(w);
  }

  std::string query(std::size_t topic) {
    std::vector<std::string> w;
    pick(vocab_.query[topic], 3, w);
    pick(vocab_.filler, 2, w);
    return join(w);
  }

  // `shared` of six content words drawn from topic a, the rest from topic b.
  std::string mixed_sentence(std::size_t a, std::size_t b, std::size_t shared) {
    std::vector<std::string> w;
    pick(vocab_.doc[a], shared, w);
    pick(vocab_.doc[b], 6 - shared, w);
    pick(vocab_.filler, 1, w);
    return join(w);
  }

  std::size_t other_topic(std::size_t t) {
    const std::size_t o = rng_.below(cfg_.topics - 1);
    return o >= t ? o + 1 : o;
  }

 private:
  void pick(const std::vector<std::string>& from, std::size_t n, std::vector<std::string>& out) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(from[rng_.below(from.size())]);
  }

  std::string join(std::vector<std::string>& words) {
    rng_.shuffle(std::span<std::string>(words));
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s.push_back(' ');
      s += w;
    }
    return s;
  }

  std::string fresh_word() {
    static constexpr char kCons[] = "bdfgklmnprstvz";
    static constexpr char kVow[] = "aeiou";
    for (;;) {
      std::string w;
      const std::size_t syll = 2 + rng_.below(2);
      for (std::size_t i = 0; i < syll; ++i) {
        w.push_back(kCons[rng_.below(sizeof kCons - 1)]);
        w.push_back(kVow[rng_.below(sizeof kVow - 1)]);
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> fresh_words(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fresh_word());
    return out;
  }

  void build_vocab() {
    for (const char* instr : {kRetrievalInstruction, kQaInstruction}) {
      std::istringstream in(instr);
      for (std::string w; in >> w;) used_.insert(w);
    }
    for (std::size_t t = 0; t < cfg_.topics; ++t) {
      vocab_.doc.push_back(fresh_words(kTopicDocWords));
      vocab_.query.push_back(fresh_words(kTopicQueryWords));
    }
    vocab_.filler = fresh_words(kFillerWords);
    vocab_.passage_style = fresh_words(kStyleWords);
    vocab_.answer_style = fresh_words(kStyleWords);
  }

  SynthConfig cfg_;
  Rng rng_;
  Vocab vocab_;
  std::set<std::string> used_;
};

std::string pad_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

std::string topic_label(std::size_t t) { return "topic" + std::to_string(t); }

// Corpus of `per_style` documents for each requested style, round-robin over
// topics, and `n_queries` queries judged relevant to every document of their
// topic whose style is `relevant`.
RetrievalData retrieval_set(Generator& g, std::size_t topics, std::size_t per_style, std::size_t n_queries,
                            const std::vector<Style>& styles, Style relevant) {
  RetrievalData ds;
  std::vector<std::vector<std::string>> relevant_ids(topics);
  std::size_t next_id = 0;
  for (Style s : styles) {
    for (std::size_t i = 0; i < per_style; ++i) {
      const std::size_t t = i % topics;
      Document d{pad_id("d", next_id++), g.doc(t, s)};
      if (s == relevant) relevant_ids[t].push_back(d.id);
      ds.corpus.push_back(std::move(d));
    }
  }
  for (std::size_t i = 0; i < n_queries; ++i) {
    const std::size_t t = i % topics;
    Document q{pad_id("q", i), g.query(t)};
    for (const auto& id : relevant_ids[t]) ds.qrels[q.id][id] = 1;
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

}  // namespace

void validate(const SynthConfig& cfg) {
  if (cfg.topics < 2) throw ValidationError("synth: need at least 2 topics");
  if (cfg.size < 2 * cfg.topics) throw ValidationError("synth: size must be at least twice the topic count");
}

Suite make_suite(const SynthConfig& cfg) {
  validate(cfg);
  Generator g(cfg);
  const std::size_t T = cfg.topics;
  const std::size_t N = cfg.size;
  Suite suite;
  suite.instructions = {{"retrieval", kRetrievalInstruction}, {"qa", kQaInstruction}};

  auto add = [&](TaskKind kind, std::string name, TaskPayload payload, std::string tag) {
    suite.task_tags[name] = tag;
    suite.datasets.push_back({kind, std::move(name), std::move(payload)});
  };

  add(TaskKind::Retrieval, "retrieval", retrieval_set(g, T, N, N / 2, {Style::Passage}, Style::Passage),
      "retrieval");
  add(TaskKind::Retrieval, "mixed-passage",
      retrieval_set(g, T, N, N / 2, {Style::Passage, Style::Answer}, Style::Passage), "retrieval");
  add(TaskKind::Retrieval, "mixed-answer",
      retrieval_set(g, T, N, N / 2, {Style::Passage, Style::Answer}, Style::Answer), "qa");

  {
    RerankingData rr;
    for (std::size_t i = 0; i < N / 2; ++i) {
      const std::size_t t = i % T;
      RerankingEntry e{g.query(t), {}, {}};
      for (int k = 0; k < 2; ++k) e.positive.push_back(g.doc(t, Style::Passage));
      for (int k = 0; k < 6; ++k) e.negative.push_back(g.doc(g.other_topic(t), Style::Passage));
      rr.entries.push_back(std::move(e));
    }
    add(TaskKind::Reranking, "reranking", std::move(rr), "reranking");
  }
  {
    StsData sts;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t a = i % T;
      const std::size_t b = g.other_topic(a);
      const std::size_t shared = i % 7;
      sts.pairs.push_back({g.mixed_sentence(a, a, 6), g.mixed_sentence(a, b, shared),
                           static_cast<double>(shared) / 6.0});
    }
    add(TaskKind::STS, "sts", std::move(sts), "sts");
  }
  {
    ClassificationData cls;
    for (std::size_t i = 0; i < N; ++i) cls.train.push_back({g.doc(i % T, Style::Passage), topic_label(i % T)});
    for (std::size_t i = 0; i < N / 2; ++i) cls.test.push_back({g.doc(i % T, Style::Passage), topic_label(i % T)});
    add(TaskKind::Classification, "classification", std::move(cls), "classification");
  }
  {
    PairClassificationData pc;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t t = i % T;
      const bool same = (i / T) % 2 == 0;
      pc.pairs.push_back({g.query(t), g.doc(same ? t : g.other_topic(t), Style::Passage), same ? 1 : 0});
    }
    add(TaskKind::PairClassification, "pairclassification", std::move(pc), "pairclassification");
  }
  {
    ClusteringData cl;
    for (std::size_t i = 0; i < N; ++i) cl.items.push_back({g.doc(i % T, Style::Passage), topic_label(i % T)});
    add(TaskKind::Clustering, "clustering", std::move(cl), "clustering");
  }

  for (std::size_t i = 0; i < 4 * N; ++i) {
    suite.corpus.push_back(g.doc(i % T, i % 2 == 0 ? Style::Passage : Style::Answer));
  }
  for (std::size_t i = 0; i < 32 * N; ++i) {
    const std::size_t t = g.rng().below(T);
    const Style s = g.rng().below(2) == 0 ? Style::Passage : Style::Answer;
    suite.unlabeled.push_back({g.query(t), g.doc(t, s), "synthetic", std::nullopt});
  }
  for (std::size_t i = 0; i < 8 * N; ++i) {
    const std::size_t t = g.rng().below(T);
    const bool retrieval = i % 2 == 0;
    const Style pos = retrieval ? Style::Passage : Style::Answer;
    const Style neg = retrieval ? Style::Answer : Style::Passage;
    train::LabeledTaskPair p;
    p.pair = {g.query(t), g.doc(t, pos), "synthetic", std::nullopt};
    p.task_tag = retrieval ? "retrieval" : "qa";
    p.hard_negative = g.doc(t, neg);
    suite.labeled.push_back(std::move(p));
  }

  const Vocab& v = g.vocab();
  for (std::size_t t = 0; t < T; ++t) {
    for (const auto& w : v.doc[t]) suite.word_topic[w] = static_cast<int>(t);
    for (const auto& w : v.query[t]) suite.word_topic[w] = static_cast<int>(t);
  }
  for (const auto& ds : suite.datasets) validate(ds);
  return suite;
}

int topic_of(const Suite& suite, const std::string& text) {
  std::map<int, int> counts;
  std::istringstream in(text);
  for (std::string w; in >> w;) {
    if (auto it = suite.word_topic.find(w); it != suite.word_topic.end()) ++counts[it->second];
  }
  int best = -1;
  int best_count = 0;
  for (const auto& [t, c] : counts) {
    if (c > best_count) {
      best = t;
      best_count = c;
    }
  }
  return best;
}

void write_suite(const Suite& suite, const fs::path& dir) {
  const fs::path tasks = dir / "tasks";
  const fs::path train_dir = dir / "train";
  fs::create_directories(tasks);
  fs::create_directories(train_dir);
  for (const auto& ds : suite.datasets) write_task_dataset(ds, tasks);
  OrderedJson tags = OrderedJson::object();
  for (const auto& [name, tag] : suite.task_tags) tags[name] = tag;
  write_file(tasks / "tasks.json", tags.dump(2) + "\n");

  {
    JsonlWriter w(train_dir / "corpus.jsonl");
    for (const auto& t : suite.corpus) w.write(OrderedJson{{"text", t}});
    w.close();
  }
  write_text_pairs(suite.unlabeled, train_dir / "unlabeled.jsonl");
  train::write_labeled_pairs(suite.labeled, train_dir / "labeled.jsonl");
  OrderedJson instr = OrderedJson::object();
  for (const auto& [tag, s] : suite.instructions) instr[tag] = s;
  write_file(train_dir / "instructions.json", instr.dump(2) + "\n");
}

std::vector<std::string> read_corpus(const fs::path& path) {
  std::vector<std::string> out;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    auto it = j.find("text");
    if (it == j.end() || !it->is_string()) throw ParseError("missing string field \"text\"");
    out.push_back(it->get<std::string>());
  });
  return out;
}

}  // namespace embkit::synth
